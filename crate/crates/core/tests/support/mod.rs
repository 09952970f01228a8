pub mod index_oracle;

pub mod instances;
pub mod oracles;
pub mod treatment;

pub mod attacks;
pub mod canonical;
pub mod chaincode;
pub mod cli;
pub mod fixtures;
pub mod identity;
pub mod ledger;
pub mod ordering;
pub mod pipeline;
pub mod vulnscan;

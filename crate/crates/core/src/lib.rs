pub mod config;
pub mod dapp;
pub mod experiment;
pub mod fl;
pub mod hash;
pub mod ids;
pub mod ledger;
pub mod metrics;
pub mod par;
pub mod seed;
pub mod sim;
pub mod store;
pub mod time;
pub mod trust;

pub mod ate;
pub mod cate;
pub mod crossfit;
pub mod dataset;
pub mod dmliv;
pub mod driv;
pub mod error;
pub mod inference;
pub mod learners;
pub mod dgp;
pub mod harness;
mod par;
pub mod pipeline;
pub mod report;

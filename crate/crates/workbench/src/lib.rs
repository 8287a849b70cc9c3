//! Pipeline orchestration and the box-review service.

pub mod cli;
pub mod manifest;
pub mod review;
pub mod stages;

//! Human box review: a verdict store and the HTTP service around it.

mod api;
mod store;

pub use api::{router, serve, TOKEN_HEADER};
pub use store::{
    Decision, ElementView, ReviewStore, ScreenPage, ScreenSummary, ScreenView, StoreError, Verdict,
};

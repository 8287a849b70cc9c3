//! Reference-expression generation: prompt templates, an endpoint client,
//! response parsing and expression combination.

pub mod client;
pub mod combine;
pub mod error;
pub mod parse;
pub mod prompts;

pub use client::{call_endpoint, CallOutcome, EndpointConfig, RejectRecord, TokenBucket};
pub use combine::{combine, sample_re_combination};
pub use error::RefgenError;
pub use parse::{parse_re_response, render_re_response};
pub use prompts::{
    build_long_prompt, build_longgold_prompt, verify_templates, PromptPayload, Template, UserPart,
};

use groundkit_core::ReferenceBundle;

/// Sends a prompt and parses the reply; failures carry the raw response
/// when one was received so they can be quarantined.
pub fn annotate(
    item_id: &str,
    payload: &PromptPayload,
    cfg: &EndpointConfig,
    limiter: Option<&TokenBucket>,
) -> Result<ReferenceBundle, RejectRecord> {
    if let Some(bucket) = limiter {
        bucket.acquire();
    }
    let outcome = call_endpoint(payload, cfg).map_err(|e| RejectRecord::new(item_id, &e, None))?;
    let gold = payload.template == Template::LongGold;
    parse_re_response(&outcome.text, gold)
        .map_err(|e| RejectRecord::new(item_id, &e, Some(outcome.text)))
}

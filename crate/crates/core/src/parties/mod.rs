//! The model provider and the data provider, and what they exchange.
//!
//! Both run an authenticated key exchange with the device through the
//! untrusted host. The model provider seals its model and publishes the
//! binary chain; the data provider commits to the host's PC list, seals
//! inputs and opens outputs. With a budget in force the model provider
//! authorizes each inference from a tag over the input, never the input
//! itself.

pub mod commit;
pub mod messages;
pub mod ppi;
mod provider;
mod session;

pub use provider::{DataProvider, ModelProvider, PpiError, ProviderSnapshot};
pub use session::{ProviderIdentity, ProviderSession, SessionError, TrustAnchor};

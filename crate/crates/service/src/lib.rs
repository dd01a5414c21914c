//! HTTP and server-sent-events API over interactive relay design sessions.
//!
//! Each session owns a designer state and, for simulated fields, the field
//! it measures. Commands on one session run one at a time in arrival order;
//! every state change is appended to the session's event stream and
//! written to the snapshot store.

mod error;
mod http;
mod session;
mod store;

pub use error::{ApiError, ErrorBody};
pub use http::{router, serve, AppState, Created, EventLog, ServiceConfig};
pub use session::{
    resolve_link_model, ApiSession, Command, CreateSession, Event, EventKind, FieldKind, GraphDelta, GraphResponse,
    GraphViewKind, Metrics, RelaysRequest, RelaysResponse, SessionView, SimulatedFieldState, StepAction, StepRequest,
    StepResponse,
};
pub use store::Store;

//! The management message format shared by pull and push.
//!
//! A message is a block of CRLF-terminated `Key: Value` header lines, a blank
//! line, and a line-oriented body. The body may be DEFLATE-compressed; headers
//! never are. On stream transports each encoded message is carried in a
//! length-prefixed frame (see [`frame`]).

mod codec;
mod frame;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use codec::{decode_message, encode_auto, encode_message, DecodeError, EncodeError};
pub use frame::{deframe_all, frame, Deframer, FrameError, MAX_FRAME_LEN};

use crate::mib::{MibError, MibSchema, MibValue, TableRow};
use crate::oid::Oid;
use crate::subscription::Subscription;

/// Content type of encoded messages when carried over HTTP.
pub const CONTENT_TYPE: &str = "application/x-mf-mgmt; version=1";

/// Bodies at least this long are worth compressing.
pub const COMPRESS_THRESHOLD: usize = 256;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($text => Ok($name::$variant),)+ _ => Err(()) }
            }
        }
    };
}

named_enum!(MessageKind {
    GetRequest => "get-request",
    GetTableRequest => "get-table-request",
    SetRequest => "set-request",
    Response => "response",
    PushReport => "push-report",
    Notification => "notification",
    SyncProbe => "sync-probe",
    SyncReply => "sync-reply",
    SubscribeRequest => "subscribe-request",
    SubscribeAck => "subscribe-ack",
    ResendRequest => "resend-request",
});

named_enum!(
    /// Error statuses carried by responses, acks and error bindings.
    ErrorCode {
        NoSuchInstance => "no-such-instance",
        EndOfMib => "end-of-mib",
        AccessDenied => "access-denied",
        WrongType => "wrong-type",
        NotATable => "not-a-table",
        BadRequest => "bad-request",
        NotFound => "not-found",
        SubscribeRejected => "subscribe-rejected",
        Unavailable => "unavailable",
    }
);

impl From<&MibError> for ErrorCode {
    fn from(err: &MibError) -> Self {
        match err {
            MibError::NoSuchInstance(_) => ErrorCode::NoSuchInstance,
            MibError::EndOfMib => ErrorCode::EndOfMib,
            MibError::AccessDenied(_) => ErrorCode::AccessDenied,
            MibError::WrongType { .. } => ErrorCode::WrongType,
            MibError::NotATable(_) => ErrorCode::NotATable,
            MibError::Schema(_) => ErrorCode::BadRequest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    Error { code: ErrorCode, reason: String },
}

impl Status {
    pub fn error(code: ErrorCode, reason: impl Into<String>) -> Self {
        Status::Error { code, reason: reason.into() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindValue {
    Value(MibValue),
    /// Per-binding failure, e.g. a subscribed variable that vanished.
    Error(ErrorCode),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBind {
    pub oid: Oid,
    pub value: BindValue,
}

impl VarBind {
    pub fn new(oid: Oid, value: MibValue) -> Self {
        VarBind { oid, value: BindValue::Value(value) }
    }

    pub fn error(oid: Oid, code: ErrorCode) -> Self {
        VarBind { oid, value: BindValue::Error(code) }
    }

    pub fn mib_value(&self) -> Option<&MibValue> {
        match &self.value {
            BindValue::Value(v) => Some(v),
            BindValue::Error(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Body {
    #[default]
    Empty,
    Oids(Vec<Oid>),
    Bindings(Vec<VarBind>),
    Rows(Vec<TableRow>),
    Subscription(Subscription),
    /// Publish index: every schema the agent supports.
    Index(Vec<MibSchema>),
}

impl Body {
    fn type_name(&self) -> Option<&'static str> {
        match self {
            Body::Empty => None,
            Body::Oids(_) => Some("oids"),
            Body::Bindings(_) => Some("bindings"),
            Body::Rows(_) => Some("rows"),
            Body::Subscription(_) => Some("subscription"),
            Body::Index(_) => Some("index"),
        }
    }

    pub fn bindings(&self) -> &[VarBind] {
        match self {
            Body::Bindings(b) => b,
            _ => &[],
        }
    }
}

/// Four-timestamp clock probe fields. A probe carries only `t1`; the reply
/// echoes `t1` and adds the agent's receive (`t2`) and send (`t3`) times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncTimes {
    pub t1: u64,
    pub t2: Option<u64>,
    pub t3: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManagementMessage {
    pub kind: MessageKind,
    pub request_id: Option<u64>,
    pub subscription_id: Option<String>,
    pub seq: Option<u64>,
    /// Milliseconds since the epoch on the sender's clock.
    pub timestamp: u64,
    pub status: Option<Status>,
    pub notification: Option<String>,
    pub device: Option<String>,
    pub sync: Option<SyncTimes>,
    pub body: Body,
}

impl ManagementMessage {
    pub fn new(kind: MessageKind, timestamp: u64) -> Self {
        ManagementMessage {
            kind,
            request_id: None,
            subscription_id: None,
            seq: None,
            timestamp,
            status: None,
            notification: None,
            device: None,
            sync: None,
            body: Body::Empty,
        }
    }

    pub fn get_request(request_id: u64, oids: Vec<Oid>, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::GetRequest, timestamp);
        m.request_id = Some(request_id);
        m.body = Body::Oids(oids);
        m
    }

    pub fn get_table_request(request_id: u64, tables: Vec<Oid>, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::GetTableRequest, timestamp);
        m.request_id = Some(request_id);
        m.body = Body::Oids(tables);
        m
    }

    pub fn set_request(request_id: u64, bindings: Vec<VarBind>, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::SetRequest, timestamp);
        m.request_id = Some(request_id);
        m.body = Body::Bindings(bindings);
        m
    }

    pub fn response(request_id: u64, status: Status, body: Body, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::Response, timestamp);
        m.request_id = Some(request_id);
        m.status = Some(status);
        m.body = body;
        m
    }

    pub fn push_report(subscription_id: &str, seq: u64, device: &str, bindings: Vec<VarBind>, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::PushReport, timestamp);
        m.subscription_id = Some(subscription_id.into());
        m.seq = Some(seq);
        m.device = Some(device.into());
        m.body = Body::Bindings(bindings);
        m
    }

    pub fn notification(
        subscription_id: &str,
        seq: u64,
        device: &str,
        name: &str,
        bindings: Vec<VarBind>,
        timestamp: u64,
    ) -> Self {
        let mut m = Self::new(MessageKind::Notification, timestamp);
        m.subscription_id = Some(subscription_id.into());
        m.seq = Some(seq);
        m.device = Some(device.into());
        m.notification = Some(name.into());
        m.body = Body::Bindings(bindings);
        m
    }

    pub fn sync_probe(request_id: u64, t1: u64) -> Self {
        let mut m = Self::new(MessageKind::SyncProbe, t1);
        m.request_id = Some(request_id);
        m.sync = Some(SyncTimes { t1, t2: None, t3: None });
        m
    }

    pub fn sync_reply(request_id: u64, t1: u64, t2: u64, t3: u64) -> Self {
        let mut m = Self::new(MessageKind::SyncReply, t3);
        m.request_id = Some(request_id);
        m.sync = Some(SyncTimes { t1, t2: Some(t2), t3: Some(t3) });
        m
    }

    pub fn subscribe_request(request_id: u64, subscription: Subscription, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::SubscribeRequest, timestamp);
        m.request_id = Some(request_id);
        m.body = Body::Subscription(subscription);
        m
    }

    /// A subscribe-request without a document: attaches the current stream
    /// connection to an existing subscription.
    pub fn stream_attach(request_id: u64, subscription_id: &str, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::SubscribeRequest, timestamp);
        m.request_id = Some(request_id);
        m.subscription_id = Some(subscription_id.into());
        m
    }

    pub fn subscribe_ack(request_id: u64, subscription_id: &str, status: Status, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::SubscribeAck, timestamp);
        m.request_id = Some(request_id);
        m.subscription_id = Some(subscription_id.into());
        m.status = Some(status);
        m
    }

    pub fn resend_request(device: &str, timestamp: u64) -> Self {
        let mut m = Self::new(MessageKind::ResendRequest, timestamp);
        m.device = Some(device.into());
        m
    }

    pub fn is_stream_attach(&self) -> bool {
        self.kind == MessageKind::SubscribeRequest && matches!(self.body, Body::Empty)
    }

    /// Checks that the fields present are exactly those the kind calls for.
    pub fn validate(&self) -> Result<(), &'static str> {
        use MessageKind::*;
        let needs_request_id = matches!(
            self.kind,
            GetRequest | GetTableRequest | SetRequest | Response | SyncProbe | SyncReply | SubscribeRequest | SubscribeAck
        );
        if needs_request_id != self.request_id.is_some() {
            return Err("request-id presence does not match kind");
        }
        let needs_seq = matches!(self.kind, PushReport | Notification);
        if needs_seq != self.seq.is_some() {
            return Err("seq presence does not match kind");
        }
        let needs_status = matches!(self.kind, Response | SubscribeAck);
        if needs_status != self.status.is_some() {
            return Err("status presence does not match kind");
        }
        if (self.kind == Notification) != self.notification.is_some() {
            return Err("notification name presence does not match kind");
        }
        match self.kind {
            PushReport | Notification | SubscribeAck => {
                if self.subscription_id.is_none() {
                    return Err("subscription-id required");
                }
            }
            SubscribeRequest => {
                let attach = matches!(self.body, Body::Empty);
                if attach != self.subscription_id.is_some() {
                    return Err("subscribe-request carries either a document or an attach id");
                }
            }
            _ => {
                if self.subscription_id.is_some() {
                    return Err("subscription-id not allowed for kind");
                }
            }
        }
        let device_ok = match self.kind {
            ResendRequest => self.device.is_some(),
            PushReport | Notification | Response => true,
            _ => self.device.is_none(),
        };
        if !device_ok {
            return Err("device presence does not match kind");
        }
        match (self.kind, &self.sync) {
            (SyncProbe, Some(SyncTimes { t2: None, t3: None, .. })) => {}
            (SyncReply, Some(SyncTimes { t2: Some(_), t3: Some(_), .. })) => {}
            (SyncProbe | SyncReply, _) => return Err("sync timestamps do not match kind"),
            (_, Some(_)) => return Err("sync timestamps not allowed for kind"),
            (_, None) => {}
        }
        let body_ok = match (&self.kind, &self.body) {
            (GetRequest | GetTableRequest, Body::Oids(_)) => true,
            (SetRequest, Body::Bindings(b)) => b.iter().all(|vb| vb.mib_value().is_some()),
            (Response, Body::Oids(_)) => false,
            (Response, _) => true,
            (PushReport | Notification, Body::Bindings(_) | Body::Empty) => true,
            (SubscribeRequest, Body::Subscription(_) | Body::Empty) => true,
            (SyncProbe | SyncReply | SubscribeAck | ResendRequest, Body::Empty) => true,
            _ => false,
        };
        if !body_ok {
            return Err("body type not allowed for kind");
        }
        if let Body::Subscription(sub) = &self.body {
            if sub.id.is_empty() || sub.endpoints.is_empty() {
                return Err("subscription document incomplete");
            }
        }
        Ok(())
    }
}

/// Encoding applied to the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    Identity,
    Deflate,
}

impl EncodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::Identity => "identity",
            EncodingMode::Deflate => "deflate",
        }
    }

    /// Deflate for bodies at or above [`COMPRESS_THRESHOLD`], identity otherwise.
    pub fn for_body_len(len: usize) -> Self {
        if len >= COMPRESS_THRESHOLD {
            EncodingMode::Deflate
        } else {
            EncodingMode::Identity
        }
    }
}

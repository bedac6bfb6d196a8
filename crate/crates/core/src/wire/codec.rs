use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::{
    BindValue, Body, EncodingMode, ErrorCode, ManagementMessage, MessageKind, Status, SyncTimes, VarBind,
    MAX_FRAME_LEN,
};
use crate::mib::{parse_schema_text, MibValue, Syntax, TableRow};
use crate::oid::Oid;
use crate::pct;
use crate::subscription::{Endpoint, Selection, Subscription, Transport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("message violates kind invariants: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("header block is not terminated")]
    UnterminatedHeaders,
    #[error("malformed header line `{0}`")]
    BadHeader(String),
    #[error("missing header {0}")]
    MissingHeader(&'static str),
    #[error("unsupported MF-Version `{0}`")]
    UnsupportedVersion(String),
    #[error("unknown MF-Type `{0}`")]
    UnknownKind(String),
    #[error("unknown MF-Encoding `{0}`")]
    UnknownEncoding(String),
    #[error("body truncated: declared {declared} bytes, got {actual}")]
    TruncatedBody { declared: usize, actual: usize },
    #[error("{0} bytes after the declared body")]
    TrailingData(usize),
    #[error("compressed body is corrupt")]
    CorruptEncoding,
    #[error("bad percent-encoding in {0}")]
    BadPercentEncoding(&'static str),
    #[error("body line {line}: {message}")]
    BadBody { line: usize, message: String },
    #[error("decoded message violates kind invariants: {0}")]
    Invalid(&'static str),
}

fn encode_binding(out: &mut String, vb: &VarBind) {
    match &vb.value {
        BindValue::Value(v) => {
            let _ = writeln!(out, "{} {} {}", vb.oid, v.syntax(), v.encode_text());
        }
        BindValue::Error(code) => {
            let _ = writeln!(out, "{} error {}", vb.oid, code);
        }
    }
}

fn encode_body(body: &Body) -> String {
    let mut out = String::new();
    match body {
        Body::Empty => {}
        Body::Oids(oids) => {
            for oid in oids {
                let _ = writeln!(out, "{oid}");
            }
        }
        Body::Bindings(bindings) => bindings.iter().for_each(|vb| encode_binding(&mut out, vb)),
        Body::Rows(rows) => {
            for row in rows {
                let _ = writeln!(out, "row {}", row.index);
                for (oid, value) in &row.columns {
                    encode_binding(&mut out, &VarBind::new(oid.clone(), value.clone()));
                }
            }
        }
        Body::Subscription(sub) => {
            let _ = writeln!(out, "id {}", pct::encode_str(&sub.id));
            let _ = writeln!(out, "created {}", sub.created_at);
            let _ = writeln!(out, "durable {}", sub.durable);
            for ep in &sub.endpoints {
                let _ = writeln!(out, "endpoint {} {} {}", ep.transport, pct::encode_str(&ep.host), ep.port);
            }
            for sel in &sub.selections {
                let _ = writeln!(out, "select {} {}", sel.oid, sel.period_ms);
            }
            for name in &sub.notification_filter {
                let _ = writeln!(out, "filter {}", pct::encode_str(name));
            }
        }
        Body::Index(schemas) => {
            for schema in schemas {
                out.push_str(&schema.to_text());
            }
        }
    }
    out
}

/// Encodes a message. With [`EncodingMode::Deflate`] the body bytes are
/// DEFLATE-compressed and `MF-Encoding` records it; headers stay plain text.
pub fn encode_message(msg: &ManagementMessage, enc: EncodingMode) -> Result<Vec<u8>, EncodeError> {
    msg.validate().map_err(EncodeError::Invalid)?;
    let plain = encode_body(&msg.body);
    let body = match enc {
        EncodingMode::Identity => plain.into_bytes(),
        EncodingMode::Deflate => miniz_oxide::deflate::compress_to_vec(plain.as_bytes(), 6),
    };

    let mut head = String::new();
    let _ = write!(head, "MF-Version: 1\r\nMF-Type: {}\r\nMF-Encoding: {}\r\n", msg.kind, enc.as_str());
    if let Some(id) = msg.request_id {
        let _ = write!(head, "MF-Request-Id: {id}\r\n");
    }
    if let Some(sub) = &msg.subscription_id {
        let _ = write!(head, "MF-Subscription: {}\r\n", pct::encode_str(sub));
    }
    if let Some(seq) = msg.seq {
        let _ = write!(head, "MF-Seq: {seq}\r\n");
    }
    let _ = write!(head, "MF-Timestamp: {}\r\n", msg.timestamp);
    match &msg.status {
        Some(Status::Ok) => head.push_str("MF-Status: ok\r\n"),
        Some(Status::Error { code, reason }) => {
            let _ = write!(head, "MF-Status: {code}\r\n");
            if !reason.is_empty() {
                let _ = write!(head, "MF-Reason: {}\r\n", pct::encode_str(reason));
            }
        }
        None => {}
    }
    if let Some(name) = &msg.notification {
        let _ = write!(head, "MF-Notification: {}\r\n", pct::encode_str(name));
    }
    if let Some(device) = &msg.device {
        let _ = write!(head, "MF-Device: {}\r\n", pct::encode_str(device));
    }
    if let Some(sync) = &msg.sync {
        let _ = write!(head, "MF-T1: {}\r\n", sync.t1);
        if let Some(t2) = sync.t2 {
            let _ = write!(head, "MF-T2: {t2}\r\n");
        }
        if let Some(t3) = sync.t3 {
            let _ = write!(head, "MF-T3: {t3}\r\n");
        }
    }
    if let Some(name) = msg.body.type_name() {
        let _ = write!(head, "MF-Body: {name}\r\n");
    }
    let _ = write!(head, "MF-Length: {}\r\n\r\n", body.len());

    let mut out = head.into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

/// Encodes with deflate when the plain body reaches the compression threshold.
pub fn encode_auto(msg: &ManagementMessage) -> Result<Vec<u8>, EncodeError> {
    let plain_len = encode_body(&msg.body).len();
    encode_message(msg, EncodingMode::for_body_len(plain_len))
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    bytes.windows(4).position(|w| w == b"\r\n\r\n")
}

struct Headers<'a> {
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Headers<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.fields.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| *v)
    }

    fn number(&self, key: &'static str) -> Result<Option<u64>, DecodeError> {
        self.get(key)
            .map(|v| v.parse::<u64>().map_err(|_| DecodeError::BadHeader(format!("{key}: {v}"))))
            .transpose()
    }

    fn text(&self, key: &'static str) -> Result<Option<String>, DecodeError> {
        self.get(key)
            .map(|v| pct::decode_str(v).map_err(|_| DecodeError::BadPercentEncoding(key)))
            .transpose()
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<ManagementMessage, DecodeError> {
    let head_end = find_header_end(bytes).ok_or(DecodeError::UnterminatedHeaders)?;
    let head = core::str::from_utf8(&bytes[..head_end])
        .map_err(|_| DecodeError::BadHeader("non-UTF-8 header block".into()))?;
    let mut fields = Vec::new();
    for line in head.split("\r\n") {
        let (k, v) = line.split_once(": ").ok_or_else(|| DecodeError::BadHeader(line.to_string()))?;
        fields.push((k, v));
    }
    let headers = Headers { fields };

    let version = headers.get("MF-Version").ok_or(DecodeError::MissingHeader("MF-Version"))?;
    if version != "1" {
        return Err(DecodeError::UnsupportedVersion(version.to_string()));
    }
    let kind_text = headers.get("MF-Type").ok_or(DecodeError::MissingHeader("MF-Type"))?;
    let kind: MessageKind = kind_text.parse().map_err(|_| DecodeError::UnknownKind(kind_text.to_string()))?;
    let encoding = match headers.get("MF-Encoding") {
        Some("identity") | None => EncodingMode::Identity,
        Some("deflate") => EncodingMode::Deflate,
        Some(other) => return Err(DecodeError::UnknownEncoding(other.to_string())),
    };
    let declared = headers.number("MF-Length")?.ok_or(DecodeError::MissingHeader("MF-Length"))? as usize;
    let raw_body = &bytes[head_end + 4..];
    if raw_body.len() < declared {
        if encoding == EncodingMode::Deflate {
            return Err(DecodeError::CorruptEncoding);
        }
        return Err(DecodeError::TruncatedBody { declared, actual: raw_body.len() });
    }
    if raw_body.len() > declared {
        return Err(DecodeError::TrailingData(raw_body.len() - declared));
    }
    let plain = match encoding {
        EncodingMode::Identity => raw_body.to_vec(),
        EncodingMode::Deflate => miniz_oxide::inflate::decompress_to_vec_with_limit(raw_body, MAX_FRAME_LEN)
            .map_err(|_| DecodeError::CorruptEncoding)?,
    };
    let body_text = core::str::from_utf8(&plain)
        .map_err(|_| DecodeError::BadBody { line: 0, message: "body is not UTF-8".into() })?;
    let body = decode_body(headers.get("MF-Body"), body_text)?;

    let status = match headers.get("MF-Status") {
        None => None,
        Some("ok") => Some(Status::Ok),
        Some(code) => {
            let code: ErrorCode = code.parse().map_err(|_| DecodeError::BadHeader(format!("MF-Status: {code}")))?;
            let reason = headers.text("MF-Reason")?.unwrap_or_default();
            Some(Status::Error { code, reason })
        }
    };
    let sync = match headers.number("MF-T1")? {
        Some(t1) => Some(SyncTimes { t1, t2: headers.number("MF-T2")?, t3: headers.number("MF-T3")? }),
        None => None,
    };
    let msg = ManagementMessage {
        kind,
        request_id: headers.number("MF-Request-Id")?,
        subscription_id: headers.text("MF-Subscription")?,
        seq: headers.number("MF-Seq")?,
        timestamp: headers.number("MF-Timestamp")?.ok_or(DecodeError::MissingHeader("MF-Timestamp"))?,
        status,
        notification: headers.text("MF-Notification")?,
        device: headers.text("MF-Device")?,
        sync,
        body,
    };
    msg.validate().map_err(DecodeError::Invalid)?;
    Ok(msg)
}

fn bad(line: usize, message: impl Into<String>) -> DecodeError {
    DecodeError::BadBody { line, message: message.into() }
}

fn parse_oid(line: usize, text: &str) -> Result<Oid, DecodeError> {
    Oid::parse(text).map_err(|e| bad(line, format!("{e}")))
}

fn parse_binding(line: usize, text: &str) -> Result<VarBind, DecodeError> {
    let mut parts = text.splitn(3, ' ');
    let oid = parse_oid(line, parts.next().unwrap_or(""))?;
    let tag = parts.next().ok_or_else(|| bad(line, "missing value tag"))?;
    let value = parts.next().ok_or_else(|| bad(line, "missing value"))?;
    if tag == "error" {
        let code: ErrorCode = value.parse().map_err(|_| bad(line, format!("unknown error code `{value}`")))?;
        return Ok(VarBind::error(oid, code));
    }
    let syntax: Syntax = tag.parse().map_err(|_| bad(line, format!("unknown tag `{tag}`")))?;
    let value = MibValue::decode_text(syntax, value).map_err(|e| match syntax {
        Syntax::OctetString => DecodeError::BadPercentEncoding("binding value"),
        _ => bad(line, format!("{e}")),
    })?;
    Ok(VarBind::new(oid, value))
}

fn body_lines(text: &str) -> Result<Vec<(usize, &str)>, DecodeError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let Some(stripped) = text.strip_suffix('\n') else {
        return Err(bad(0, "body does not end with a newline"));
    };
    Ok(stripped.split('\n').enumerate().map(|(i, l)| (i + 1, l)).collect())
}

fn decode_body(body_type: Option<&str>, text: &str) -> Result<Body, DecodeError> {
    let Some(body_type) = body_type else {
        return if text.is_empty() { Ok(Body::Empty) } else { Err(bad(0, "body present without MF-Body")) };
    };
    let lines = body_lines(text)?;
    match body_type {
        "oids" => Ok(Body::Oids(lines.iter().map(|&(n, l)| parse_oid(n, l)).collect::<Result<_, _>>()?)),
        "bindings" => Ok(Body::Bindings(lines.iter().map(|&(n, l)| parse_binding(n, l)).collect::<Result<_, _>>()?)),
        "rows" => {
            let mut rows: Vec<TableRow> = Vec::new();
            for (n, l) in lines {
                if let Some(index) = l.strip_prefix("row ") {
                    let index = index.parse().map_err(|_| bad(n, "bad row index"))?;
                    rows.push(TableRow { index, columns: Vec::new() });
                    continue;
                }
                let row = rows.last_mut().ok_or_else(|| bad(n, "binding before first row"))?;
                let vb = parse_binding(n, l)?;
                match vb.value {
                    BindValue::Value(v) => row.columns.push((vb.oid, v)),
                    BindValue::Error(_) => return Err(bad(n, "error binding inside a table row")),
                }
            }
            Ok(Body::Rows(rows))
        }
        "subscription" => decode_subscription(&lines).map(Body::Subscription),
        "index" => {
            let files = parse_schema_text(text, "index").map_err(|e| bad(e.line, e.message))?;
            Ok(Body::Index(files.into_iter().map(|f| f.schema).collect()))
        }
        other => Err(bad(0, format!("unknown MF-Body `{other}`"))),
    }
}

fn decode_subscription(lines: &[(usize, &str)]) -> Result<Subscription, DecodeError> {
    let mut id = None;
    let mut created_at = 0;
    let mut durable = false;
    let mut endpoints = Vec::new();
    let mut selections = Vec::new();
    let mut filter = BTreeSet::new();
    let text = |v: &str| pct::decode_str(v).map_err(|_| DecodeError::BadPercentEncoding("subscription"));
    for &(n, line) in lines {
        let fields: Vec<&str> = line.split(' ').collect();
        match fields.as_slice() {
            ["id", v] => id = Some(text(v)?),
            ["created", v] => created_at = v.parse().map_err(|_| bad(n, "bad created"))?,
            ["durable", v] => durable = v.parse().map_err(|_| bad(n, "bad durable flag"))?,
            ["endpoint", transport, host, port] => endpoints.push(Endpoint {
                transport: transport.parse::<Transport>().map_err(|e| bad(n, e))?,
                host: text(host)?,
                port: port.parse().map_err(|_| bad(n, "bad port"))?,
            }),
            ["select", oid, period] => selections.push(Selection {
                oid: parse_oid(n, oid)?,
                period_ms: period.parse().map_err(|_| bad(n, "bad period"))?,
            }),
            ["filter", name] => {
                filter.insert(text(name)?);
            }
            _ => return Err(bad(n, format!("unrecognized subscription line `{line}`"))),
        }
    }
    Ok(Subscription {
        id: id.ok_or_else(|| bad(0, "subscription without id"))?,
        endpoints,
        selections,
        notification_filter: filter,
        durable,
        created_at,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mib::{builtin_schemas, MibSchema};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn sync_probe_is_headers_only() {
        let bytes = encode_message(&ManagementMessage::sync_probe(1, 0), EncodingMode::Identity).unwrap();
        let text = core::str::from_utf8(&bytes).unwrap();
        assert!(text.ends_with("MF-Length: 0\r\n\r\n"));
        assert_eq!(
            text,
            "MF-Version: 1\r\nMF-Type: sync-probe\r\nMF-Encoding: identity\r\nMF-Request-Id: 1\r\n\
             MF-Timestamp: 0\r\nMF-T1: 0\r\nMF-Length: 0\r\n\r\n"
        );
    }

    #[test]
    fn exact_push_report_bytes() {
        let msg = ManagementMessage::push_report(
            "hb",
            3,
            "r1",
            vec![VarBind::new(Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 5, 0]), MibValue::text("r 1"))],
            1000,
        );
        let bytes = encode_message(&msg, EncodingMode::Identity).unwrap();
        assert_eq!(
            core::str::from_utf8(&bytes).unwrap(),
            "MF-Version: 1\r\nMF-Type: push-report\r\nMF-Encoding: identity\r\nMF-Subscription: hb\r\n\
             MF-Seq: 3\r\nMF-Timestamp: 1000\r\nMF-Device: r1\r\nMF-Body: bindings\r\nMF-Length: 37\r\n\r\n\
             1.3.6.1.2.1.1.5.0 octet-string r%201\n"
        );
    }

    #[test]
    fn version_gate() {
        let bytes = encode_message(&ManagementMessage::sync_probe(1, 0), EncodingMode::Identity).unwrap();
        let text = core::str::from_utf8(&bytes).unwrap().replace("MF-Version: 1", "MF-Version: 2");
        assert_eq!(decode_message(text.as_bytes()), Err(DecodeError::UnsupportedVersion("2".into())));
        let text = core::str::from_utf8(&bytes).unwrap().replace("sync-probe", "sync-poke");
        assert_eq!(decode_message(text.as_bytes()), Err(DecodeError::UnknownKind("sync-poke".into())));
    }

    fn big_report(n: usize) -> ManagementMessage {
        let bindings = (0..n)
            .map(|i| {
                VarBind::new(
                    Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, 2, i as u32]),
                    MibValue::text(&format!("interface description {i}")),
                )
            })
            .collect();
        ManagementMessage::push_report("s", 1, "d", bindings, 5)
    }

    #[test]
    fn truncated_deflate_body_is_corrupt_encoding() {
        let bytes = encode_message(&big_report(20), EncodingMode::Deflate).unwrap();
        assert_eq!(decode_message(&bytes[..bytes.len() - 5]), Err(DecodeError::CorruptEncoding));
        // same length but garbage content
        let mut garbled = bytes.clone();
        let n = garbled.len();
        for b in &mut garbled[n - 10..] {
            *b = 0xff;
        }
        assert_eq!(decode_message(&garbled), Err(DecodeError::CorruptEncoding));
    }

    #[test]
    fn truncated_identity_body() {
        let bytes = encode_message(&big_report(2), EncodingMode::Identity).unwrap();
        assert!(matches!(decode_message(&bytes[..bytes.len() - 1]), Err(DecodeError::TruncatedBody { .. })));
        assert_eq!(decode_message(b"MF-Version: 1\r\n"), Err(DecodeError::UnterminatedHeaders));
    }

    #[test]
    fn bad_percent_encoding() {
        let bytes = encode_message(&big_report(1), EncodingMode::Identity).unwrap();
        let text = core::str::from_utf8(&bytes).unwrap().replace("interface%20", "interface%2Z");
        assert!(matches!(decode_message(text.as_bytes()), Err(DecodeError::BadPercentEncoding(_))));
    }

    #[test]
    fn deflate_shrinks_fifty_text_bindings() {
        let msg = big_report(50);
        let plain = encode_message(&msg, EncodingMode::Identity).unwrap();
        let packed = encode_message(&msg, EncodingMode::Deflate).unwrap();
        assert!(packed.len() < plain.len(), "{} !< {}", packed.len(), plain.len());
        assert_eq!(decode_message(&packed).unwrap(), decode_message(&plain).unwrap());
    }

    #[test]
    fn get_request_size_tracks_oid_text() {
        let size = |k: u32| {
            let oids: Vec<Oid> = (0..k).map(|i| Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, 10, i + 100])).collect();
            let text_len: usize = oids.iter().map(|o| o.to_string().len() + 1).sum();
            let bytes = encode_message(&ManagementMessage::get_request(7, oids, 0), EncodingMode::Identity).unwrap();
            (bytes.len(), text_len)
        };
        let (s10, t10) = size(10);
        let (s20, t20) = size(20);
        assert_eq!(s20 - s10, t20 - t10);
    }

    #[test]
    fn invalid_messages_are_refused() {
        let mut m = ManagementMessage::sync_probe(1, 0);
        m.seq = Some(1);
        assert!(encode_message(&m, EncodingMode::Identity).is_err());
        let mut m = ManagementMessage::get_request(1, vec![], 0);
        m.request_id = None;
        assert!(encode_message(&m, EncodingMode::Identity).is_err());
    }

    #[test]
    fn index_body_roundtrip() {
        let msg = ManagementMessage::response(1, Status::Ok, Body::Index(builtin_schemas()), 0);
        for enc in [EncodingMode::Identity, EncodingMode::Deflate] {
            assert_eq!(decode_message(&encode_message(&msg, enc).unwrap()).unwrap(), msg);
        }
        let empty = ManagementMessage::response(1, Status::Ok, Body::Index(vec![MibSchema::empty("V")]), 0);
        assert_eq!(decode_message(&encode_message(&empty, EncodingMode::Identity).unwrap()).unwrap(), empty);
    }

    // ---- random message generation shared with property tests ----

    fn arb_oid() -> impl Strategy<Value = Oid> {
        prop::collection::vec(0u32..2000, 1..10).prop_map(|a| Oid::new(a).unwrap())
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[ -~]{0,12}".prop_map(|s| s)
    }

    fn arb_token() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9-]{0,10}"
    }

    pub(crate) fn arb_value() -> impl Strategy<Value = MibValue> {
        prop_oneof![
            any::<i32>().prop_map(MibValue::Integer),
            any::<u32>().prop_map(MibValue::Counter32),
            any::<u32>().prop_map(MibValue::Gauge),
            any::<u32>().prop_map(MibValue::TimeTicks),
            prop::collection::vec(any::<u8>(), 0..40).prop_map(MibValue::OctetString),
            arb_oid().prop_map(MibValue::Oid),
        ]
    }

    fn arb_code() -> impl Strategy<Value = ErrorCode> {
        prop::sample::select(ErrorCode::ALL.to_vec())
    }

    fn arb_bind(allow_error: bool) -> impl Strategy<Value = VarBind> {
        let value = arb_value().prop_map(BindValue::Value);
        let any_value = if allow_error {
            prop_oneof![4 => value, 1 => arb_code().prop_map(BindValue::Error)].boxed()
        } else {
            value.boxed()
        };
        (arb_oid(), any_value).prop_map(|(oid, value)| VarBind { oid, value })
    }

    fn arb_binds(allow_error: bool) -> impl Strategy<Value = Vec<VarBind>> {
        prop::collection::vec(arb_bind(allow_error), 0..12)
    }

    fn arb_rows() -> impl Strategy<Value = Vec<TableRow>> {
        prop::collection::vec(
            (any::<u32>(), prop::collection::vec((arb_oid(), arb_value()), 0..5))
                .prop_map(|(index, columns)| TableRow { index, columns }),
            0..5,
        )
    }

    fn arb_subscription() -> impl Strategy<Value = Subscription> {
        let endpoint = (arb_text(), any::<u16>(), prop::sample::select(vec![
            Transport::Stream,
            Transport::Datagram,
            Transport::HttpPush,
        ]))
            .prop_map(|(host, port, transport)| Endpoint { host, port, transport });
        (
            "[ -~]{1,12}",
            prop::collection::vec(endpoint, 1..3),
            prop::collection::vec((arb_oid(), 100u64..10_000_000).prop_map(|(oid, period_ms)| Selection { oid, period_ms }), 0..5),
            prop::collection::btree_set(arb_text(), 0..3),
            any::<bool>(),
            any::<u64>(),
        )
            .prop_map(|(id, endpoints, selections, notification_filter, durable, created_at)| Subscription {
                id,
                endpoints,
                selections,
                notification_filter,
                durable,
                created_at,
            })
    }

    fn arb_schema() -> impl Strategy<Value = MibSchema> {
        use crate::mib::{Access, NotificationDef, VariableDef};
        (
            arb_token(),
            prop::collection::btree_set(prop::collection::vec(0u32..50, 2..5), 0..6),
            prop::collection::btree_set(arb_token(), 0..3),
        )
            .prop_map(|(name, oids, notifs)| {
                // keep only prefix-free oids
                let mut kept: Vec<Vec<u32>> = Vec::new();
                for o in oids {
                    if !kept.iter().any(|k| o.starts_with(k) || k.starts_with(&o)) {
                        kept.push(o);
                    }
                }
                let variables = kept
                    .into_iter()
                    .enumerate()
                    .map(|(i, arcs)| VariableDef {
                        oid: Oid::new(arcs).unwrap(),
                        name: format!("v{i}"),
                        syntax: Syntax::ALL[i % 6],
                        access: if i % 2 == 0 { Access::ReadOnly } else { Access::ReadWrite },
                        is_table_column: i % 3 == 0,
                        description: String::new(),
                    })
                    .collect();
                let notifications = notifs
                    .into_iter()
                    .map(|n| NotificationDef { name: n, payload: vec![Oid::from_slice(&[1, 3])] })
                    .collect();
                MibSchema { name, variables, notifications }
            })
    }

    fn arb_status() -> impl Strategy<Value = Status> {
        prop_oneof![
            Just(Status::Ok),
            (arb_code(), arb_text()).prop_map(|(code, reason)| Status::Error { code, reason }),
        ]
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = ManagementMessage> {
        let ts = any::<u64>();
        prop_oneof![
            (any::<u64>(), prop::collection::vec(arb_oid(), 0..10), ts)
                .prop_map(|(id, oids, t)| ManagementMessage::get_request(id, oids, t)),
            (any::<u64>(), prop::collection::vec(arb_oid(), 0..3), ts)
                .prop_map(|(id, oids, t)| ManagementMessage::get_table_request(id, oids, t)),
            (any::<u64>(), arb_binds(false), ts).prop_map(|(id, b, t)| ManagementMessage::set_request(id, b, t)),
            (any::<u64>(), arb_status(), prop_oneof![
                Just(Body::Empty),
                arb_binds(true).prop_map(Body::Bindings),
                arb_rows().prop_map(Body::Rows),
                arb_subscription().prop_map(Body::Subscription),
                prop::collection::vec(arb_schema(), 0..3).prop_map(Body::Index),
            ], ts)
                .prop_map(|(id, s, b, t)| ManagementMessage::response(id, s, b, t)),
            (arb_text(), any::<u64>(), arb_text(), arb_binds(true), ts)
                .prop_map(|(s, q, d, b, t)| ManagementMessage::push_report(&s, q, &d, b, t)),
            (arb_text(), any::<u64>(), arb_text(), arb_text(), arb_binds(false), ts)
                .prop_map(|(s, q, d, n, b, t)| ManagementMessage::notification(&s, q, &d, &n, b, t)),
            (any::<u64>(), any::<u64>()).prop_map(|(id, t1)| ManagementMessage::sync_probe(id, t1)),
            (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>())
                .prop_map(|(id, a, b, c)| ManagementMessage::sync_reply(id, a, b, c)),
            (any::<u64>(), arb_subscription(), ts)
                .prop_map(|(id, s, t)| ManagementMessage::subscribe_request(id, s, t)),
            (any::<u64>(), arb_text(), ts).prop_map(|(id, s, t)| ManagementMessage::stream_attach(id, &s, t)),
            (any::<u64>(), arb_text(), arb_status(), ts)
                .prop_map(|(id, s, st, t)| ManagementMessage::subscribe_ack(id, &s, st, t)),
            (arb_text(), ts).prop_map(|(d, t)| ManagementMessage::resend_request(&d, t)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn roundtrip_both_encodings(msg in arb_message()) {
            let plain = encode_message(&msg, EncodingMode::Identity).unwrap();
            let packed = encode_message(&msg, EncodingMode::Deflate).unwrap();
            prop_assert_eq!(decode_message(&plain).unwrap(), msg.clone());
            prop_assert_eq!(decode_message(&packed).unwrap(), msg);
        }
    }
}

//! The HTTP/1.1 subset spoken on management ports: `Content-Length` bodies,
//! persistent connections, in-order pipelining. Header parsing uses `httparse`.

use std::io::{self, BufRead, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use mf_core::wire::{self, ManagementMessage, CONTENT_TYPE};

const MAX_HEAD: usize = 64 * 1024;
const MAX_HEADERS: usize = 32;
pub const REQUEST_ID_HEADER: &str = "MF-Request-Id";
pub const JSON: &str = "application/json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
}

impl Request {
    pub fn new(method: &str, path: &str) -> Self {
        Request { method: method.into(), path: path.into(), headers: Vec::new(), body: Vec::new() }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn with_body(mut self, content_type: &str, body: Vec<u8>) -> Self {
        self.headers.push(("Content-Type".into(), content_type.into()));
        self.body = body;
        self
    }

    /// A request carrying an encoded management message.
    pub fn with_message(self, msg: &ManagementMessage) -> Self {
        let body = wire::encode_auto(msg).expect("valid message");
        self.with_body(CONTENT_TYPE, body)
    }

    pub fn keep_alive(&self) -> bool {
        !self.header("Connection").is_some_and(|v| v.eq_ignore_ascii_case("close"))
    }

    pub fn request_id(&self) -> u64 {
        self.header(REQUEST_ID_HEADER).and_then(|v| v.parse().ok()).unwrap_or(0)
    }

    /// Path without the query string, and the decoded query pairs.
    pub fn split_query(&self) -> (&str, Vec<(String, String)>) {
        match self.path.split_once('?') {
            None => (&self.path, Vec::new()),
            Some((p, q)) => {
                let pairs = q
                    .split('&')
                    .filter(|s| !s.is_empty())
                    .map(|kv| {
                        let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                        let dec = |s: &str| mf_core::pct::decode_str(s).unwrap_or_else(|_| s.to_string());
                        (dec(k), dec(v))
                    })
                    .collect();
                (p, pairs)
            }
        }
    }

    pub fn to_bytes(&self, host: &str) -> Vec<u8> {
        let mut out = format!("{} {} HTTP/1.1\r\nHost: {host}\r\n", self.method, self.path);
        for (k, v) in &self.headers {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        out.push_str(&format!("Content-Length: {}\r\n\r\n", self.body.len()));
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.body);
        bytes
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        422 => "Unprocessable Entity",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

impl Response {
    pub fn new(status: u16, content_type: &str, body: Vec<u8>) -> Self {
        Response { status, headers: vec![("Content-Type".into(), content_type.into())], body }
    }

    pub fn message(msg: &ManagementMessage) -> Self {
        Response::new(200, CONTENT_TYPE, wire::encode_auto(msg).expect("valid message"))
    }

    pub fn json(status: u16, value: &impl serde::Serialize) -> Self {
        Response::new(status, JSON, serde_json::to_vec(value).expect("serializable"))
    }

    pub fn text(status: u16, text: &str) -> Self {
        Response::new(status, "text/plain", text.as_bytes().to_vec())
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }

    pub fn to_bytes(&self, keep_alive: bool) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, reason(self.status));
        for (k, v) in &self.headers {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        if !keep_alive {
            out.push_str("Connection: close\r\n");
        }
        out.push_str(&format!("Content-Length: {}\r\n\r\n", self.body.len()));
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.body);
        bytes
    }

    pub fn decode_message(&self) -> io::Result<ManagementMessage> {
        wire::decode_message(&self.body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Reads through the blank line ending a header block. `Ok(None)` on a
/// clean end of stream before any byte.
fn read_head(r: &mut impl BufRead) -> io::Result<Option<Vec<u8>>> {
    let mut head = Vec::new();
    loop {
        let n = r.read_until(b'\n', &mut head)?;
        if n == 0 {
            return if head.is_empty() {
                Ok(None)
            } else {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed inside headers"))
            };
        }
        if head == b"\r\n" || head == b"\n" {
            // tolerate stray blank lines between pipelined messages
            head.clear();
            continue;
        }
        if head.ends_with(b"\r\n\r\n") || head.ends_with(b"\n\n") {
            return Ok(Some(head));
        }
        if head.len() > MAX_HEAD {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "header block too large"));
        }
    }
}

fn bad(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

fn collect_headers(raw: &[httparse::Header<'_>]) -> io::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|h| Ok((h.name.to_string(), String::from_utf8(h.value.to_vec()).map_err(bad)?)))
        .collect()
}

fn read_body(r: &mut impl BufRead, headers: &[(String, String)]) -> io::Result<Vec<u8>> {
    let len: usize = match header(headers, "Content-Length") {
        Some(v) => v.trim().parse().map_err(bad)?,
        None => 0,
    };
    if len > mf_core::wire::MAX_FRAME_LEN {
        return Err(bad("body too large"));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn read_request(r: &mut impl BufRead) -> io::Result<Option<Request>> {
    let Some(head) = read_head(r)? else { return Ok(None) };
    let mut raw = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut raw);
    match req.parse(&head).map_err(bad)? {
        httparse::Status::Complete(_) => {}
        httparse::Status::Partial => return Err(bad("incomplete request head")),
    }
    let method = req.method.unwrap_or("").to_string();
    let path = req.path.unwrap_or("/").to_string();
    let headers = collect_headers(req.headers)?;
    let body = read_body(r, &headers)?;
    Ok(Some(Request { method, path, headers, body }))
}

pub fn read_response(r: &mut impl BufRead) -> io::Result<Response> {
    let head = read_head(r)?.ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))?;
    let mut raw = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut raw);
    match resp.parse(&head).map_err(bad)? {
        httparse::Status::Complete(_) => {}
        httparse::Status::Partial => return Err(bad("incomplete response head")),
    }
    let status = resp.code.unwrap_or(0);
    let headers = collect_headers(resp.headers)?;
    let body = read_body(r, &headers)?;
    Ok(Response { status, headers, body })
}

pub fn write_request(w: &mut impl Write, host: &str, req: &Request) -> io::Result<()> {
    w.write_all(&req.to_bytes(host))?;
    w.flush()
}

pub fn write_response(w: &mut impl Write, resp: &Response, keep_alive: bool) -> io::Result<()> {
    w.write_all(&resp.to_bytes(keep_alive))?;
    w.flush()
}

/// A client-side persistent connection. Requests may be written back to
/// back and their responses read afterwards, in the same order.
pub struct Connection {
    host: String,
    reader: io::BufReader<TcpStream>,
    writer: TcpStream,
    pub last_used: Instant,
}

impl Connection {
    pub fn open(addr: SocketAddr, timeout: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let writer = stream.try_clone()?;
        Ok(Connection { host: addr.to_string(), reader: io::BufReader::new(stream), writer, last_used: Instant::now() })
    }

    pub fn peer(&self) -> io::Result<SocketAddr> {
        self.writer.peer_addr()
    }

    /// Writes one request; returns the bytes put on the wire.
    pub fn send(&mut self, req: &Request) -> io::Result<usize> {
        let bytes = req.to_bytes(&self.host);
        self.writer.write_all(&bytes)?;
        self.last_used = Instant::now();
        Ok(bytes.len())
    }

    /// Writes several requests in one write.
    pub fn send_all(&mut self, reqs: &[Request]) -> io::Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut sizes = Vec::new();
        for r in reqs {
            let b = r.to_bytes(&self.host);
            sizes.push(b.len());
            out.extend(b);
        }
        self.writer.write_all(&out)?;
        self.last_used = Instant::now();
        Ok(sizes)
    }

    pub fn receive(&mut self) -> io::Result<Response> {
        let r = read_response(&mut self.reader);
        self.last_used = Instant::now();
        r
    }

    pub fn call(&mut self, req: &Request) -> io::Result<Response> {
        self.send(req)?;
        self.receive()
    }
}

/// One request on a fresh connection.
pub fn call(addr: SocketAddr, req: &Request, timeout: Duration) -> io::Result<Response> {
    Connection::open(addr, timeout)?.call(&req.clone().with_header("Connection", "close"))
}

pub fn resolve(addr: &str) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no address for {addr}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    #[test]
    fn pipelined_requests_parse_in_order() {
        let mut bytes = Vec::new();
        for i in 0..3 {
            bytes.extend(Request::new("GET", &format!("/mgmt/mib/1.3.{i}")).with_header(REQUEST_ID_HEADER, &i.to_string()).to_bytes("a"));
        }
        bytes.extend(Request::new("POST", "/x").with_body("text/plain", b"hello".to_vec()).to_bytes("a"));
        let mut r = BufReader::new(&bytes[..]);
        for i in 0..3 {
            let req = read_request(&mut r).unwrap().unwrap();
            assert_eq!(req.path, format!("/mgmt/mib/1.3.{i}"));
            assert_eq!(req.request_id(), i);
            assert!(req.keep_alive());
        }
        assert_eq!(read_request(&mut r).unwrap().unwrap().body, b"hello");
        assert!(read_request(&mut r).unwrap().is_none());
    }

    #[test]
    fn response_roundtrip() {
        let resp = Response::text(404, "nope");
        let bytes = resp.to_bytes(false);
        let back = read_response(&mut BufReader::new(&bytes[..])).unwrap();
        assert_eq!(back.status, 404);
        assert_eq!(back.body, b"nope");
        assert_eq!(back.header("connection"), Some("close"));
    }

    #[test]
    fn query_split() {
        let req = Request::new("GET", "/api/report?device=r1&oid=1.3.6&from=0&x=a%20b");
        let (p, q) = req.split_query();
        assert_eq!(p, "/api/report");
        assert_eq!(q[3], ("x".into(), "a b".into()));
    }

    #[test]
    fn truncated_body_is_error() {
        let mut bytes = Request::new("POST", "/x").with_body("text/plain", b"hello".to_vec()).to_bytes("a");
        bytes.truncate(bytes.len() - 2);
        assert!(read_request(&mut BufReader::new(&bytes[..])).is_err());
    }
}

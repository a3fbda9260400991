//! Remote distribution provider.
//!
//! Wire format: a request is `{"context_ids":[...],"top_n":K}` and the response
//! `{"entries":[[token_id, prob_in_1e-9_units], ...], "residual": units}`, with
//! probabilities as integers in 10^-9 units so the wire is bit-exact. The same
//! messages travel either as newline-delimited JSON over a TCP socket or as an
//! HTTP POST to `/v1/next_distribution`.
//!
//! The residual bucket is credited to `<UNK>`, which is never eligible for the
//! candidate pool, so it cannot influence the codec.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    Context, DistributionProvider, NGramModel, ProviderError, TokenDistribution, TokenId,
    Vocabulary, GRID,
};

#[derive(Debug, Serialize, Deserialize)]
pub struct DistributionRequest {
    pub context_ids: Vec<TokenId>,
    pub top_n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DistributionResponse {
    pub entries: Vec<(TokenId, u64)>,
    pub residual: u64,
}

enum Transport {
    /// persistent ndjson connection, requests serialized by the lock
    Ndjson(Mutex<Option<BufReader<TcpStream>>>),
    /// one HTTP request per call
    Http { host: String, path: String },
}

/// Client side of the remote protocol. Needs a local copy of the vocabulary;
/// only probabilities come over the wire.
pub struct RemoteProvider {
    endpoint: String,
    provider_id: String,
    vocabulary: Vocabulary,
    top_n: usize,
    transport: Transport,
}

impl RemoteProvider {
    /// `endpoint` is either `http://host:port` or a bare `host:port` for
    /// ndjson. `provider_id` names the remote model (id + revision +
    /// quantization); both sides must agree on it out of band.
    pub fn connect(
        endpoint: &str,
        provider_id: &str,
        vocabulary: Vocabulary,
        top_n: usize,
    ) -> Result<Self, ProviderError> {
        let transport = if let Some(rest) = endpoint.strip_prefix("http://") {
            let (host, path) = match rest.split_once('/') {
                Some((h, p)) => (h.to_string(), format!("/{p}")),
                None => (rest.to_string(), "/v1/next_distribution".to_string()),
            };
            Transport::Http { host, path }
        } else {
            let stream = TcpStream::connect(endpoint)
                .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
            Transport::Ndjson(Mutex::new(Some(BufReader::new(stream))))
        };
        Ok(Self {
            endpoint: endpoint.to_string(),
            provider_id: provider_id.to_string(),
            vocabulary,
            top_n,
            transport,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn roundtrip(&self, req: &DistributionRequest) -> Result<DistributionResponse, ProviderError> {
        let body = serde_json::to_string(req)
            .map_err(|e| ProviderError::ProtocolError(e.to_string()))?;
        match &self.transport {
            Transport::Ndjson(conn) => {
                let mut guard = conn.lock().unwrap();
                let reader = guard
                    .as_mut()
                    .ok_or_else(|| ProviderError::RemoteUnavailable("connection closed".into()))?;
                reader
                    .get_mut()
                    .write_all(format!("{body}\n").as_bytes())
                    .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                let mut line = String::new();
                let n = reader
                    .read_line(&mut line)
                    .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                if n == 0 {
                    *guard = None;
                    return Err(ProviderError::RemoteUnavailable("server closed connection".into()));
                }
                serde_json::from_str(&line)
                    .map_err(|e| ProviderError::ProtocolError(e.to_string()))
            }
            Transport::Http { host, path } => {
                let mut stream = TcpStream::connect(host)
                    .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                let request = format!(
                    "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\n\
                     Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream
                    .write_all(request.as_bytes())
                    .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                let mut reader = BufReader::new(stream);
                let mut status = String::new();
                reader
                    .read_line(&mut status)
                    .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                if !status.contains("200") {
                    return Err(ProviderError::ProtocolError(format!(
                        "unexpected status line: {}",
                        status.trim()
                    )));
                }
                let mut content_length = None;
                loop {
                    let mut line = String::new();
                    reader
                        .read_line(&mut line)
                        .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse::<usize>().ok();
                    }
                }
                let len = content_length
                    .ok_or_else(|| ProviderError::ProtocolError("missing content-length".into()))?;
                let mut buf = vec![0u8; len];
                std::io::Read::read_exact(&mut reader, &mut buf)
                    .map_err(|e| ProviderError::RemoteUnavailable(e.to_string()))?;
                serde_json::from_slice(&buf)
                    .map_err(|e| ProviderError::ProtocolError(e.to_string()))
            }
        }
    }
}

impl DistributionProvider for RemoteProvider {
    fn provider_id(&self) -> String {
        self.provider_id.clone()
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn next_distribution(&self, context: &Context) -> Result<TokenDistribution, ProviderError> {
        let v = self.vocabulary.len();
        let resp = self.roundtrip(&DistributionRequest {
            context_ids: context.token_ids.clone(),
            top_n: self.top_n,
        })?;
        let mut units = vec![0u64; v];
        let mut sum = 0u64;
        for (id, u) in &resp.entries {
            if *id as usize >= v {
                return Err(ProviderError::ProtocolError(format!(
                    "token id {id} outside vocabulary of {v}"
                )));
            }
            units[*id as usize] = *u;
            sum += *u;
        }
        if sum + resp.residual != GRID {
            return Err(ProviderError::ProtocolError(format!(
                "entries ({sum}) + residual ({}) != {GRID}",
                resp.residual
            )));
        }
        units[self.vocabulary.unk_id() as usize] += resp.residual;
        Ok(TokenDistribution::from_units(units))
    }
}

fn answer(model: &NGramModel, req: &DistributionRequest) -> Result<DistributionResponse, ProviderError> {
    let dist = model.next_distribution(&Context::new(req.context_ids.clone()))?;
    let mut indexed: Vec<(TokenId, u64)> = dist
        .units()
        .iter()
        .enumerate()
        .map(|(i, &u)| (i as TokenId, u))
        .collect();
    indexed.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    indexed.truncate(req.top_n);
    let sum: u64 = indexed.iter().map(|e| e.1).sum();
    Ok(DistributionResponse { entries: indexed, residual: GRID - sum })
}

/// Serves a model over newline-delimited JSON. Handles connections one at a
/// time; returns when the listener errors or `max_conns` connections finished.
pub fn serve_ndjson(
    listener: TcpListener,
    model: &NGramModel,
    max_conns: Option<usize>,
) -> std::io::Result<()> {
    let mut served = 0usize;
    for stream in listener.incoming() {
        let stream = stream?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            let reply = match serde_json::from_str::<DistributionRequest>(&line) {
                Ok(req) => match answer(model, &req) {
                    Ok(resp) => serde_json::to_string(&resp).unwrap(),
                    Err(e) => format!("{{\"error\":{:?}}}", e.to_string()),
                },
                Err(e) => format!("{{\"error\":{:?}}}", e.to_string()),
            };
            writer.write_all(format!("{reply}\n").as_bytes())?;
        }
        served += 1;
        if let Some(max) = max_conns {
            if served >= max {
                break;
            }
        }
    }
    Ok(())
}

/// Serves a model over HTTP POST /v1/next_distribution, one request per
/// connection.
pub fn serve_http(
    listener: TcpListener,
    model: &NGramModel,
    max_conns: Option<usize>,
) -> std::io::Result<()> {
    let mut served = 0usize;
    for stream in listener.incoming() {
        let stream = stream?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            continue;
        }
        let ok_path = request_line.starts_with("POST /v1/next_distribution");
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
        let mut body = vec![0u8; content_length];
        std::io::Read::read_exact(&mut reader, &mut body)?;
        let (status, payload) = if !ok_path {
            ("404 Not Found", "{\"error\":\"unknown endpoint\"}".to_string())
        } else {
            match serde_json::from_slice::<DistributionRequest>(&body)
                .map_err(|e| ProviderError::ProtocolError(e.to_string()))
                .and_then(|req| answer(model, &req))
            {
                Ok(resp) => ("200 OK", serde_json::to_string(&resp).unwrap()),
                Err(e) => ("400 Bad Request", format!("{{\"error\":{:?}}}", e.to_string())),
            }
        };
        let reply = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\
             Connection: close\r\n\r\n{payload}",
            payload.len()
        );
        writer.write_all(reply.as_bytes())?;
        served += 1;
        if let Some(max) = max_conns {
            if served >= max {
                break;
            }
        }
    }
    Ok(())
}

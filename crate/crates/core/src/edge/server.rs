//! Line-framed TCP front end for the [`EdgeStore`].
//!
//! ```text
//! UPLOAD <session_id> <record_count>      -> OK <session_id> <record_count>
//! <meta.txt lines>                           | ERR <code> <detail>
//! <trace.csv lines>
//! END
//!
//! GET <session_id>                        -> DATASET <session_id> <record_count>
//!                                            <meta lines> <trace lines> END
//!                                            | ERR NotFound <session_id>
//! LIST                                    -> SUMMARY ... lines, then END
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;

use super::{DatasetSummary, EdgeError, EdgeStore, Receipt, SessionDataset};
use crate::monitor::TRACE_CSV_HEADER;
use crate::transport::wire::{fields, read_line};
use crate::transport::Acceptor;

pub struct EdgeServer {
    store: Arc<EdgeStore>,
    acceptor: Acceptor,
}

impl EdgeServer {
    pub fn bind(addr: &str, data_dir: impl AsRef<Path>) -> Result<Self, EdgeError> {
        let store = Arc::new(EdgeStore::open(data_dir)?);
        let listener = TcpListener::bind(addr)?;
        let shared = store.clone();
        let acceptor = Acceptor::spawn(listener, move |stream| serve(&shared, stream))?;
        Ok(Self { store, acceptor })
    }

    pub fn addr(&self) -> SocketAddr {
        self.acceptor.addr()
    }

    pub fn store(&self) -> &EdgeStore {
        &self.store
    }

    pub fn shutdown(mut self) {
        self.acceptor.stop();
    }
}

fn error_reply(e: &EdgeError) -> String {
    format!("ERR {} {}", e.code(), e.detail().replace('\n', " "))
}

/// Reads lines up to `END` and splits them into (meta, trace) texts.
fn read_blocks<R: BufRead>(reader: &mut R) -> Result<(String, String), EdgeError> {
    let mut meta = String::new();
    let mut trace = String::new();
    let mut in_trace = false;
    loop {
        let line = read_line(reader)?
            .ok_or_else(|| EdgeError::Malformed("connection closed before END".into()))?;
        if line == "END" {
            return Ok((meta, trace));
        }
        if line == TRACE_CSV_HEADER {
            in_trace = true;
        }
        let target = if in_trace { &mut trace } else { &mut meta };
        target.push_str(&line);
        target.push('\n');
    }
}

fn serve(store: &EdgeStore, stream: TcpStream) {
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let mut writer = BufWriter::new(write_half);
    let mut reader = BufReader::new(stream);
    while let Ok(Some(line)) = read_line(&mut reader) {
        let reply = match handle(store, &line, &mut reader) {
            Ok(lines) => lines,
            Err(e) => vec![error_reply(&e)],
        };
        let sent = reply.iter().try_for_each(|l| {
            writer.write_all(l.as_bytes())?;
            writer.write_all(b"\n")
        });
        if sent.and_then(|_| writer.flush()).is_err() {
            break;
        }
    }
}

fn handle<R: BufRead>(
    store: &EdgeStore,
    line: &str,
    reader: &mut R,
) -> Result<Vec<String>, EdgeError> {
    let mut words = line.split(' ');
    match words.next().unwrap_or_default() {
        "UPLOAD" => {
            let (Some(id), Some(count), None) = (words.next(), words.next(), words.next()) else {
                return Err(EdgeError::Malformed(format!("bad header `{line}`")));
            };
            let (meta, trace) = read_blocks(reader)?;
            let dataset = SessionDataset::decode(&meta, &trace)?;
            if dataset.session_id != id || count.parse::<usize>() != Ok(dataset.record_count()) {
                return Err(EdgeError::ValidationFailed(
                    "header does not match dataset".into(),
                ));
            }
            let receipt = store.upload(&dataset)?;
            Ok(vec![format!(
                "OK {} {}",
                receipt.session_id, receipt.record_count
            )])
        }
        "GET" => {
            let (Some(id), None) = (words.next(), words.next()) else {
                return Err(EdgeError::Malformed(format!("bad request `{line}`")));
            };
            let (meta, trace) = store.get_raw(id)?;
            let pairs = trace.lines().count().saturating_sub(1) / 2;
            let mut out = vec![format!("DATASET {id} {pairs}")];
            out.extend(meta.lines().map(str::to_string));
            out.extend(trace.lines().map(str::to_string));
            out.push("END".into());
            Ok(out)
        }
        "LIST" => {
            let mut out: Vec<String> = store
                .list()
                .iter()
                .map(|s| {
                    format!(
                        "SUMMARY session_id={} consumer_id={} provider_id={} technology={} terminal_reason={} energy_loss_mah={}",
                        s.session_id,
                        s.consumer_id,
                        s.provider_id,
                        s.technology,
                        s.terminal_reason,
                        s.energy_loss_mah
                    )
                })
                .collect();
            out.push("END".into());
            Ok(out)
        }
        other => Err(EdgeError::Malformed(format!("unknown command `{other}`"))),
    }
}

pub struct EdgeClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl EdgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, EdgeError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    fn send(&mut self, text: &str) -> Result<String, EdgeError> {
        self.writer.write_all(text.as_bytes())?;
        self.writer.flush()?;
        let reply = read_line(&mut self.reader)?
            .ok_or_else(|| EdgeError::Io("edge closed the connection".into()))?;
        if let Some(rest) = reply.strip_prefix("ERR ") {
            let (code, detail) = rest.split_once(' ').unwrap_or((rest, ""));
            return Err(EdgeError::from_wire(code, detail.to_string()));
        }
        Ok(reply)
    }

    pub fn upload(&mut self, dataset: &SessionDataset) -> Result<Receipt, EdgeError> {
        let text = format!(
            "UPLOAD {} {}\n{}{}END\n",
            dataset.session_id,
            dataset.record_count(),
            dataset.meta_text(),
            dataset.trace_text()
        );
        let reply = self.send(&text)?;
        let mut words = reply.split(' ');
        match (
            words.next(),
            words.next(),
            words.next().map(str::parse::<usize>),
        ) {
            (Some("OK"), Some(id), Some(Ok(record_count))) => Ok(Receipt {
                session_id: id.to_string(),
                record_count,
            }),
            _ => Err(EdgeError::Malformed(format!("unexpected reply `{reply}`"))),
        }
    }

    /// Canonical `(meta, trace)` texts exactly as stored.
    pub fn get_raw(&mut self, session_id: &str) -> Result<(String, String), EdgeError> {
        let reply = self.send(&format!("GET {session_id}\n"))?;
        if !reply.starts_with("DATASET ") {
            return Err(EdgeError::Malformed(format!("unexpected reply `{reply}`")));
        }
        read_blocks(&mut self.reader)
    }

    pub fn get(&mut self, session_id: &str) -> Result<SessionDataset, EdgeError> {
        let (meta, trace) = self.get_raw(session_id)?;
        SessionDataset::decode(&meta, &trace)
    }

    pub fn list(&mut self) -> Result<Vec<DatasetSummary>, EdgeError> {
        let mut line = self.send("LIST\n")?;
        let mut out = Vec::new();
        let keys = [
            "session_id",
            "consumer_id",
            "provider_id",
            "technology",
            "terminal_reason",
            "energy_loss_mah",
        ];
        while line != "END" {
            let v = fields(&line, &keys).map_err(|e| EdgeError::Malformed(e.to_string()))?;
            out.push(DatasetSummary {
                session_id: v[0].to_string(),
                consumer_id: v[1].to_string(),
                provider_id: v[2].to_string(),
                technology: v[3].to_string(),
                terminal_reason: v[4]
                    .parse()
                    .map_err(|_| EdgeError::Malformed(format!("reason `{}`", v[4])))?,
                energy_loss_mah: v[5]
                    .parse()
                    .map_err(|_| EdgeError::Malformed(format!("number `{}`", v[5])))?,
            });
            line = read_line(&mut self.reader)?
                .ok_or_else(|| EdgeError::Io("edge closed mid-listing".into()))?;
        }
        Ok(out)
    }
}

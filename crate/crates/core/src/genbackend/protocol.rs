//! Text framing shared with external generator processes.
//!
//! Request: `REQ <id> <direction>\n<payload>\n`. Response: `RES <id> <k>\n`
//! followed by `k` payload lines, or `ERR <id> <reason>\n`. Ids increase
//! from 1 on every connection; `ERR 0` answers a request whose header could
//! not be read.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{BackendSpec, DecodingParams, Direction, GenError};

/// Time allowed for one batch of requests.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

// Decoding parameters travel to spawned backends in the environment; the
// frames themselves carry none.
pub const ENV_TOP_P: &str = "AUGMENT_TOP_P";
pub const ENV_TEMPERATURE: &str = "AUGMENT_TEMPERATURE";
pub const ENV_SAMPLES: &str = "AUGMENT_SAMPLES";

fn single_line(s: &str) -> bool {
    !s.contains(['\n', '\r'])
}

pub fn encode_request(id: u64, direction: Direction, payload: &str) -> Result<String, GenError> {
    if !single_line(payload) {
        return Err(GenError::ProtocolError("payload spans several lines".into()));
    }
    Ok(format!("REQ {id} {direction}\n{payload}\n"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok { id: u64, outputs: Vec<String> },
    Err { id: u64, reason: String },
}

impl Response {
    /// Newlines inside outputs or reasons are flattened to spaces.
    pub fn encode(&self) -> String {
        let flat = |s: &str| s.replace(['\n', '\r'], " ");
        match self {
            Response::Ok { id, outputs } => {
                let mut out = format!("RES {id} {}\n", outputs.len());
                for o in outputs {
                    out.push_str(&flat(o));
                    out.push('\n');
                }
                out
            }
            Response::Err { id, reason } => format!("ERR {id} {}\n", flat(reason)),
        }
    }
}

fn parse_request_header(line: &str) -> Option<(u64, Direction)> {
    let mut parts = line.split(' ');
    let (Some("REQ"), Some(id), Some(dir), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return None;
    };
    Some((id.parse().ok()?, dir.parse().ok()?))
}

/// Answers requests read from `input` until end of stream. A malformed
/// header is answered with `ERR 0` and the connection stays open.
pub fn serve<R, W, F>(input: R, mut output: W, mut handler: F) -> io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(Direction, &str) -> Result<Vec<String>, String>,
{
    let mut lines = input.lines();
    while let Some(header) = lines.next() {
        let header = header?;
        let response = match parse_request_header(&header) {
            None => Response::Err {
                id: 0,
                reason: format!("malformed request header {header:?}"),
            },
            Some((id, direction)) => match lines.next() {
                None => {
                    let r = Response::Err {
                        id,
                        reason: "missing payload".into(),
                    };
                    output.write_all(r.encode().as_bytes())?;
                    return output.flush();
                }
                Some(payload) => match handler(direction, &payload?) {
                    Ok(outputs) => Response::Ok { id, outputs },
                    Err(reason) => Response::Err { id, reason },
                },
            },
        };
        output.write_all(response.encode().as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

/// Recorded responses keyed by direction and exact input text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixtureTable {
    entries: BTreeMap<(Direction, String), Vec<String>>,
}

impl FixtureTable {
    /// One `direction<TAB>input<TAB>output` line per recorded output; blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table = FixtureTable::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [dir, input, output] = cols[..] else {
                return Err(format!("line {}: expected direction<TAB>input<TAB>output", i + 1));
            };
            let dir: Direction = dir.parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            table.record(dir, input, output);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let fail = |reason: String| GenError::Fixture {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        FixtureTable::parse(&text).map_err(fail)
    }

    pub fn record(&mut self, direction: Direction, input: &str, output: &str) {
        self.entries
            .entry((direction, input.to_string()))
            .or_default()
            .push(output.to_string());
    }

    pub fn lookup(&self, direction: Direction, input: &str) -> &[String] {
        self.entries
            .get(&(direction, input.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((dir, input), outputs) in &self.entries {
            for o in outputs {
                out.push_str(&format!("{dir}\t{input}\t{o}\n"));
            }
        }
        out
    }
}

enum Transport {
    Stream {
        writer: Option<Box<dyn Write + Send>>,
        lines: Receiver<io::Result<String>>,
        child: Option<Child>,
    },
    Fixture(FixtureTable),
}

/// A connection to an external generator or labeler. Requests go out one
/// at a time; use one endpoint per worker for parallelism.
pub struct Endpoint {
    transport: Transport,
    next_id: u64,
    timeout: Duration,
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let failed = line.is_err();
            if tx.send(line).is_err() || failed {
                break;
            }
        }
    });
    rx
}

impl Endpoint {
    /// Opens `spec`. `params` are exported to spawned commands through the
    /// `AUGMENT_*` environment variables.
    pub fn connect(spec: &BackendSpec, params: &DecodingParams, timeout: Duration) -> Result<Self, GenError> {
        match spec {
            BackendSpec::Builtin => Err(GenError::BadSpec("builtin is not an external endpoint".into())),
            BackendSpec::Fixture(path) => Ok(Endpoint::from_fixture(FixtureTable::load(path)?)),
            BackendSpec::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .env(ENV_TOP_P, params.top_p.to_string())
                    .env(ENV_TEMPERATURE, params.temperature.to_string())
                    .env(ENV_SAMPLES, params.samples_per_input.to_string())
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| GenError::BackendUnavailable(format!("cannot start {cmd:?}: {e}")))?;
                let stdin = child.stdin.take().expect("piped");
                let stdout = child.stdout.take().expect("piped");
                let mut ep = Endpoint::from_streams(stdout, stdin, timeout);
                if let Transport::Stream { child: slot, .. } = &mut ep.transport {
                    *slot = Some(child);
                }
                Ok(ep)
            }
            BackendSpec::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| GenError::BackendUnavailable(format!("cannot connect to {addr}: {e}")))?;
                let reader = stream
                    .try_clone()
                    .map_err(|e| GenError::BackendUnavailable(e.to_string()))?;
                Ok(Endpoint::from_streams(reader, stream, timeout))
            }
        }
    }

    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Endpoint {
            transport: Transport::Stream {
                writer: Some(Box::new(writer)),
                lines: spawn_reader(reader),
                child: None,
            },
            next_id: 1,
            timeout,
        }
    }

    pub fn from_fixture(table: FixtureTable) -> Self {
        Endpoint {
            transport: Transport::Fixture(table),
            next_id: 1,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Sends every input in order and returns `samples_per_input` outputs
    /// for each. A fixture holding more recordings than requested yields the
    /// first ones.
    pub fn call(
        &mut self,
        direction: Direction,
        inputs: &[String],
        params: &DecodingParams,
    ) -> Result<Vec<Vec<String>>, GenError> {
        let k = params.samples_per_input;
        let deadline = Instant::now() + self.timeout;
        let mut out = Vec::with_capacity(inputs.len());
        for input in inputs {
            let id = self.next_id;
            self.next_id += 1;
            let outputs = match &mut self.transport {
                Transport::Fixture(table) => {
                    let rec = table.lookup(direction, input);
                    if rec.len() < k {
                        return Err(GenError::PartialResponse {
                            id,
                            expected: k,
                            got: rec.len(),
                        });
                    }
                    rec[..k].to_vec()
                }
                Transport::Stream { writer, lines, .. } => {
                    let frame = encode_request(id, direction, input)?;
                    let w = writer.as_mut().expect("open while the endpoint lives");
                    w.write_all(frame.as_bytes())
                        .and_then(|_| w.flush())
                        .map_err(|e| GenError::BackendUnavailable(format!("write failed: {e}")))?;
                    read_response(lines, id, k, deadline)?
                }
            };
            out.push(outputs);
        }
        Ok(out)
    }
}

fn next_line(lines: &Receiver<io::Result<String>>, deadline: Instant) -> Result<String, GenError> {
    let left = deadline.saturating_duration_since(Instant::now());
    match lines.recv_timeout(left) {
        Ok(Ok(line)) => Ok(line),
        Ok(Err(e)) => Err(GenError::ProtocolError(format!("unreadable response: {e}"))),
        Err(RecvTimeoutError::Timeout) => Err(GenError::BackendUnavailable("timed out waiting for response".into())),
        Err(RecvTimeoutError::Disconnected) => Err(GenError::BackendUnavailable("backend closed the connection".into())),
    }
}

fn read_response(
    lines: &Receiver<io::Result<String>>,
    id: u64,
    k: usize,
    deadline: Instant,
) -> Result<Vec<String>, GenError> {
    let header = next_line(lines, deadline)?;
    let bad = || GenError::ProtocolError(format!("malformed response header {header:?}"));
    let mut parts = header.splitn(3, ' ');
    let kind = parts.next().unwrap_or_default();
    let got_id: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let rest = parts.next().ok_or_else(bad)?;
    match kind {
        "ERR" if got_id == id || got_id == 0 => Err(GenError::BackendRejected {
            id,
            reason: rest.to_string(),
        }),
        "RES" if got_id == id => {
            let n: usize = rest.parse().map_err(|_| bad())?;
            if n > k {
                return Err(GenError::ProtocolError(format!("request {id}: {n} outputs for {k} requested")));
            }
            let outputs = (0..n)
                .map(|_| next_line(lines, deadline))
                .collect::<Result<Vec<_>, _>>()?;
            if n < k {
                return Err(GenError::PartialResponse {
                    id,
                    expected: k,
                    got: n,
                });
            }
            Ok(outputs)
        }
        "RES" | "ERR" => Err(GenError::ProtocolError(format!("response id {got_id} does not match request {id}"))),
        _ => Err(bad()),
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        if let Transport::Stream { writer, child, .. } = &mut self.transport {
            // closing stdin lets a well-behaved backend exit on its own
            writer.take();
            if let Some(mut child) = child.take() {
                let grace = Instant::now() + Duration::from_millis(500);
                while matches!(child.try_wait(), Ok(None)) && Instant::now() < grace {
                    thread::sleep(Duration::from_millis(10));
                }
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipe_endpoint<F>(handler: F) -> Endpoint
    where
        F: FnMut(Direction, &str) -> Result<Vec<String>, String> + Send + 'static,
    {
        let (req_r, req_w) = io::pipe().unwrap();
        let (res_r, res_w) = io::pipe().unwrap();
        thread::spawn(move || serve(BufReader::new(req_r), res_w, handler));
        Endpoint::from_streams(res_r, req_w, Duration::from_secs(5))
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn frames_are_exact() {
        assert_eq!(encode_request(7, Direction::Nlg, "A ( b = c )").unwrap(), "REQ 7 nlg\nA ( b = c )\n");
        assert!(encode_request(1, Direction::Nlu, "a\nb").is_err());
        let r = Response::Ok { id: 3, outputs: strings(&["x y", "z"]) };
        assert_eq!(r.encode(), "RES 3 2\nx y\nz\n");
        assert_eq!(Response::Err { id: 4, reason: "bad\nthing".into() }.encode(), "ERR 4 bad thing\n");
    }

    #[test]
    fn serve_answers_and_survives_garbage() {
        let input = "REQ 1 nlg\nhello\nnonsense\nREQ 2 nlu\nworld\nREQ 3 xyz\n";
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, |d, p| {
            if p == "world" {
                Err("no".into())
            } else {
                Ok(vec![format!("{d}:{p}")])
            }
        })
        .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "RES 1 1\nnlg:hello\nERR 0 malformed request header \"nonsense\"\nERR 2 no\nERR 0 malformed request header \"REQ 3 xyz\"\n"
        );
    }

    #[test]
    fn echo_round_trip_preserves_order() {
        let mut ep = pipe_endpoint(|_, p| Ok(vec![p.to_string(); 3]));
        let inputs = strings(&["a", "b b", "c"]);
        let out = ep.call(Direction::Nlg, &inputs, &DecodingParams::default()).unwrap();
        assert_eq!(out, inputs.iter().map(|i| vec![i.clone(); 3]).collect::<Vec<_>>());
        // ids keep increasing across calls
        assert_eq!(ep.next_id, 4);
        ep.call(Direction::Nlu, &inputs[..1], &DecodingParams::default()).unwrap();
    }

    #[test]
    fn short_and_long_responses() {
        let mut ep = pipe_endpoint(|_, p| Ok(vec![p.to_string(); 2]));
        let err = ep.call(Direction::Nlg, &strings(&["a"]), &DecodingParams::default()).unwrap_err();
        assert_eq!(err, GenError::PartialResponse { id: 1, expected: 3, got: 2 });
        // the stream stays in sync after a partial response
        let one = DecodingParams { samples_per_input: 1, ..Default::default() };
        let err = ep.call(Direction::Nlg, &strings(&["b"]), &one).unwrap_err();
        assert!(matches!(err, GenError::ProtocolError(_)), "{err:?}");
    }

    #[test]
    fn rejection_is_surfaced() {
        let mut ep = pipe_endpoint(|_, _| Err("cannot decode".into()));
        let err = ep.call(Direction::Nlu, &strings(&["x"]), &DecodingParams::default()).unwrap_err();
        assert_eq!(err, GenError::BackendRejected { id: 1, reason: "cannot decode".into() });
    }

    #[test]
    fn subprocess_failures() {
        let p = DecodingParams::default();
        let cat = BackendSpec::Exec("cat".into());
        let mut ep = Endpoint::connect(&cat, &p, Duration::from_secs(5)).unwrap();
        assert!(matches!(ep.call(Direction::Nlg, &strings(&["x"]), &p), Err(GenError::ProtocolError(_))));

        let silent = BackendSpec::Exec("sleep 5".into());
        let mut ep = Endpoint::connect(&silent, &p, Duration::from_millis(200)).unwrap();
        assert!(matches!(ep.call(Direction::Nlg, &strings(&["x"]), &p), Err(GenError::BackendUnavailable(_))));

        let gone = BackendSpec::Exec("true".into());
        let mut ep = Endpoint::connect(&gone, &p, Duration::from_secs(5)).unwrap();
        assert!(matches!(ep.call(Direction::Nlg, &strings(&["x"]), &p), Err(GenError::BackendUnavailable(_))));
    }

    #[test]
    fn params_reach_the_subprocess() {
        let p = DecodingParams::new(0.5, 0.7, 1).unwrap();
        let script = format!("read h; read p; echo 'RES 1 1'; echo \"${ENV_TOP_P} ${ENV_TEMPERATURE} ${ENV_SAMPLES}\"");
        let mut ep = Endpoint::connect(&BackendSpec::Exec(script), &p, Duration::from_secs(5)).unwrap();
        let out = ep.call(Direction::Nlg, &strings(&["x"]), &p).unwrap();
        assert_eq!(out, vec![strings(&["0.5 0.7 1"])]);
    }

    #[test]
    fn fixture_table() {
        let t = FixtureTable::parse("# recorded\nnlg\tA ( s = v )\tone\nnlg\tA ( s = v )\ttwo\nnlu\tone\tA ( s = v )\n").unwrap();
        assert_eq!(t.lookup(Direction::Nlg, "A ( s = v )"), strings(&["one", "two"]).as_slice());
        assert_eq!(FixtureTable::parse(&t.to_text()).unwrap(), t);
        assert!(FixtureTable::parse("nlg\tonly two").is_err());
        assert!(FixtureTable::parse("xx\ta\tb").is_err());

        let mut ep = Endpoint::from_fixture(t);
        let two = DecodingParams { samples_per_input: 2, ..Default::default() };
        assert_eq!(
            ep.call(Direction::Nlg, &strings(&["A ( s = v )"]), &two).unwrap(),
            vec![strings(&["one", "two"])]
        );
        assert_eq!(
            ep.call(Direction::Nlu, &strings(&["one"]), &two).unwrap_err(),
            GenError::PartialResponse { id: 2, expected: 2, got: 1 }
        );
    }
}

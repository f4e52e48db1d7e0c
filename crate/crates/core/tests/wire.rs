//! The line-delimited JSON policy protocol: golden transcripts, a live
//! server, and benchmark equality between remote and in-process policies.
//!
//! Set `VTLA_BLESS=1` to rewrite the fixtures after an intended change.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};
use vtla_core::dataset::instruction_text;
use vtla_core::episode::{reset, Action, TaskConfig};
use vtla_core::eval::{insertion_benchmark, Grid, StepsConvention};
use vtla_core::geometry::ShapeKind;
use vtla_core::policy::wire::{
    answer_line, decode_request, encode_request, serve, to_line, Handler, Query, RemotePolicy, WireRequest,
};
use vtla_core::policy::{oracle_policy, ActContext, Policy};
use vtla_core::sensors::Observation;
use vtla_core::Error;

const FIXED: Action = Action::new(0.3, -0.2, 1.5);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire").join(name)
}

fn golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("VTLA_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}; run with VTLA_BLESS=1", path.display()));
    assert!(want == actual, "{name} differs from the golden transcript");
}

fn sample_request() -> (String, Observation) {
    let state = reset(TaskConfig::new(ShapeKind::Square, 1.0), 42).unwrap();
    let obs = state.observe().unwrap();
    let req = encode_request(1, &obs, &instruction_text(ShapeKind::Square), ShapeKind::Square).unwrap();
    (to_line(&req).unwrap(), obs)
}

fn fixed_handler() -> Arc<Handler> {
    Arc::new(|q: &Query| {
        if q.shape == ShapeKind::Round {
            return Err(Error::Protocol("round pegs are not served".into()));
        }
        Ok(FIXED)
    })
}

/// Malformed and failing requests paired with the frames they produce.
fn error_cases(request: &str) -> Vec<String> {
    let mut req: WireRequest = serde_json::from_str(request).unwrap();
    req.id = 7;
    req.shape = "round".into();
    let refused = to_line(&req).unwrap();
    req.id = 8;
    req.shape = "octagon".into();
    let unknown = to_line(&req).unwrap();
    req.id = 9;
    req.shape = "square".into();
    req.images.vision = "not base64!".into();
    let bad_image = to_line(&req).unwrap();
    vec![
        "{\"id\": 3,".to_string() + "\n",
        "{\"id\": 4}\n".to_string(),
        refused,
        unknown,
        bad_image,
    ]
}

#[test]
fn request_and_response_match_golden_transcripts() {
    let (request, _) = sample_request();
    golden("request.jsonl", &request);
    let handler = fixed_handler();
    let response = to_line(&answer_line(request.trim_end(), handler.as_ref()).unwrap()).unwrap();
    golden("response.jsonl", &response);
    let errors: String = error_cases(&request)
        .iter()
        .map(|line| to_line(&answer_line(line.trim_end(), handler.as_ref()).unwrap_err()).unwrap())
        .collect();
    golden("errors.jsonl", &errors);
}

#[test]
fn request_round_trip_is_lossless_at_8_bits() {
    let (request, obs) = sample_request();
    let req: WireRequest = serde_json::from_str(&request).unwrap();
    let q = decode_request(&req).unwrap();
    assert_eq!(q.observation, obs.quantized());
    assert_eq!((q.id, q.shape), (1, ShapeKind::Square));
    assert_eq!(q.instruction, instruction_text(ShapeKind::Square));
    let again = encode_request(1, &q.observation, &q.instruction, q.shape).unwrap();
    assert_eq!(to_line(&again).unwrap(), request);
}

fn start(handler: Arc<Handler>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || serve(listener, handler));
    addr
}

#[test]
fn live_server_answers_byte_for_byte() {
    let addr = start(fixed_handler());
    let mut conn = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let request = std::fs::read_to_string(fixture("request.jsonl")).unwrap();
    let mut line = String::new();
    // Several requests on one connection.
    for _ in 0..3 {
        conn.write_all(request.as_bytes()).unwrap();
        line.clear();
        reader.read_line(&mut line).unwrap();
        assert_eq!(line, std::fs::read_to_string(fixture("response.jsonl")).unwrap());
    }
    // An error frame ends the connection.
    conn.write_all(b"not json\n").unwrap();
    line.clear();
    reader.read_line(&mut line).unwrap();
    assert!(line.starts_with("{\"id\":null,\"error\":\"malformed JSON"), "{line}");
    line.clear();
    assert_eq!(reader.read_line(&mut line).unwrap(), 0);
}

#[test]
fn remote_policy_reports_transport_and_server_errors() {
    let (_, obs) = sample_request();
    let free = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let err = RemotePolicy::new(&free).query(&obs, "", ShapeKind::Square).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");

    let remote = RemotePolicy::new(&start(fixed_handler()));
    assert_eq!(remote.query(&obs, "", ShapeKind::Square).unwrap(), FIXED);
    let err = remote.query(&obs, "", ShapeKind::Round).unwrap_err();
    assert!(err.to_string().contains("round pegs are not served"), "{err}");
    // The pool recovers with a fresh connection.
    assert_eq!(remote.query(&obs, "", ShapeKind::Hexagon).unwrap(), FIXED);
}

fn images_key(obs: &Observation, shape: ShapeKind) -> String {
    let req = encode_request(0, obs, "", shape).unwrap();
    let bytes = serde_json::to_vec(&req.images).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The in-process oracle, remembering what it answered for each rendered
/// observation.
struct Recorder(Mutex<HashMap<String, Action>>);

impl Policy for Recorder {
    fn act(&self, ctx: &ActContext) -> vtla_core::Result<Action> {
        let a = oracle_policy().act(ctx)?;
        self.0.lock().unwrap().insert(images_key(ctx.observation, ctx.shape), a);
        Ok(a)
    }

    fn name(&self) -> String {
        "oracle".into()
    }
}

#[test]
fn remote_oracle_replay_reproduces_in_process_table() {
    let cells = Grid::Shapes.cells();
    let recorder = Recorder(Mutex::new(HashMap::new()));
    let local = insertion_benchmark(&recorder, &cells, 10, 5, StepsConvention::SuccessOnly).unwrap();
    let direct = insertion_benchmark(&oracle_policy(), &cells, 10, 5, StepsConvention::SuccessOnly).unwrap();
    assert_eq!(local.cells, direct.cells);

    let answers = Arc::new(recorder.0.into_inner().unwrap());
    let handler: Arc<Handler> = Arc::new(move |q: &Query| {
        answers
            .get(&images_key(&q.observation, q.shape))
            .copied()
            .ok_or_else(|| Error::Protocol("observation was never recorded".into()))
    });
    let remote = RemotePolicy::new(&start(handler));
    let table = insertion_benchmark(&remote, &cells, 10, 5, StepsConvention::SuccessOnly).unwrap();
    assert_eq!(table.cells, direct.cells);
    assert!(table.cells.iter().all(|c| c.errors == 0 && c.success_rate == 100.0));
}

//! The framed message format spoken between workers, relays, query tools,
//! and the hub.
//!
//! A frame is a 4-octet little-endian unsigned length `L` followed by `L`
//! octets of UTF-8 JSON encoding a single object. The object carries a
//! `"type"` field naming the message kind plus the kind-specific fields.
//! Relays wrap messages by adding a `"ctag"` unsigned-integer field to the
//! same object; the hub echoes the tag back so the relay can route the
//! response to the right downstream connection.
//!
//! Frames are capped (default 16 MiB): tasks are metadata, not data, and a
//! cap turns a corrupted length prefix into a clean error instead of an
//! unbounded allocation. Unknown fields in a body are ignored for forward
//! compatibility; unknown kinds are malformed.
//!
//! Everything here is a pure function over octet sequences — safe to call
//! from any number of threads with no shared state.

use serde::{Deserialize, Serialize};

/// Default cap on the octet length of a frame body.
pub const DEFAULT_FRAME_CAP: u32 = 16 * 1024 * 1024;

/// Task metadata as carried on the wire and stored by the hub.
///
/// The payload is opaque to the hub; by convention it is a shell command
/// for the bundled shell executor, or a `"<micros> <iters>"` pair for the
/// spin executor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Unique within one hub lifetime; never empty.
    pub name: String,
    /// Opaque to the hub.
    pub payload: String,
    /// Who created the task (free-form; useful in post-mortems).
    pub originator: String,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        payload: impl Into<String>,
        originator: impl Into<String>,
    ) -> Self {
        TaskSpec {
            name: name.into(),
            payload: payload.into(),
            originator: originator.into(),
        }
    }
}

/// Per-state task counts reported by the hub's `stat` operation.
///
/// `deque` is the ready-deque length and `assignments` the total number of
/// (worker, task) assignments; both are redundant with the state counts and
/// serve as cheap cross-checks. A nonzero `waiting` with zero `ready`,
/// `assigned`, and `deque` indicates a deadlocked graph (only `transfer`
/// can create one).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatCounts {
    pub waiting: u64,
    pub ready: u64,
    pub assigned: u64,
    pub done: u64,
    pub errored: u64,
    pub deque: u64,
    pub assignments: u64,
}

impl StatCounts {
    /// Total tasks ever successfully created.
    pub fn total(&self) -> u64 {
        self.waiting + self.ready + self.assigned + self.done + self.errored
    }
}

/// One protocol message. Exactly one is carried per frame.
///
/// Every request kind has a fixed legal response set:
/// `CreateReq` → `OkResp`/`ErrResp`; `StealReq` → `TasksResp`/
/// `NotFoundResp`/`ExitResp`; `CompleteReq`, `TransferReq`, `ExitReq` →
/// `OkResp`/`ErrResp`; `StatReq` → `StatResp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    /// Register a new task with dependencies (which must already exist).
    #[serde(rename = "create")]
    CreateReq { task: TaskSpec, deps: Vec<String> },
    /// Ask for up to `n` runnable tasks ("Steal n").
    #[serde(rename = "steal")]
    StealReq { worker: String, n: u32 },
    /// Report an executed task: `ok` distinguishes success from task error.
    #[serde(rename = "complete")]
    CompleteReq { worker: String, task: String, ok: bool },
    /// Hand an assigned task back with new dependencies; it re-runs after
    /// they complete. An empty `new_deps` re-inserts it at the serving end.
    #[serde(rename = "transfer")]
    TransferReq {
        worker: String,
        task: String,
        new_deps: Vec<String>,
    },
    /// Declare a worker gone; its assigned tasks return to the ready pool.
    #[serde(rename = "exit")]
    ExitReq { worker: String },
    /// Ask for per-state task counts.
    #[serde(rename = "stat")]
    StatReq,
    /// Generic success acknowledgement.
    #[serde(rename = "ok")]
    OkResp,
    /// Stolen tasks, oldest first.
    #[serde(rename = "tasks")]
    TasksResp { tasks: Vec<TaskSpec> },
    /// Nothing runnable right now, but unfinished tasks remain — retry later.
    #[serde(rename = "notfound")]
    NotFoundResp,
    /// Nothing runnable and nothing waiting — the worker may exit.
    #[serde(rename = "exitresp")]
    ExitResp,
    /// Request failed; `message` says why.
    #[serde(rename = "err")]
    ErrResp { message: String },
    /// Per-state counts.
    #[serde(rename = "statresp")]
    StatResp { counts: StatCounts },
}

impl Message {
    /// Short kind name as it appears in the wire `"type"` field.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::CreateReq { .. } => "create",
            Message::StealReq { .. } => "steal",
            Message::CompleteReq { .. } => "complete",
            Message::TransferReq { .. } => "transfer",
            Message::ExitReq { .. } => "exit",
            Message::StatReq => "stat",
            Message::OkResp => "ok",
            Message::TasksResp { .. } => "tasks",
            Message::NotFoundResp => "notfound",
            Message::ExitResp => "exitresp",
            Message::ErrResp { .. } => "err",
            Message::StatResp { .. } => "statresp",
        }
    }

    /// Structural validity for this kind: non-empty names and tokens,
    /// positive steal counts. Enforced symmetrically by [`encode`]
    /// (as [`EncodeError`]) and [`decode`] (as [`DecodeError::Malformed`]).
    fn validate(&self) -> Result<(), String> {
        fn spec_ok(spec: &TaskSpec) -> Result<(), String> {
            if spec.name.is_empty() {
                return Err("task name must be non-empty".into());
            }
            Ok(())
        }
        fn token(what: &str, s: &str) -> Result<(), String> {
            if s.is_empty() {
                return Err(format!("{what} must be non-empty"));
            }
            Ok(())
        }
        match self {
            Message::CreateReq { task, .. } => spec_ok(task),
            Message::StealReq { worker, n } => {
                token("worker id", worker)?;
                if *n == 0 {
                    return Err("steal count must be positive".into());
                }
                Ok(())
            }
            Message::CompleteReq { worker, task, .. } => {
                token("worker id", worker)?;
                token("task name", task)
            }
            Message::TransferReq { worker, task, .. } => {
                token("worker id", worker)?;
                token("task name", task)
            }
            Message::ExitReq { worker } => token("worker id", worker),
            Message::TasksResp { tasks } => {
                for t in tasks {
                    spec_ok(t)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A message failed to encode.
#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    /// A field violates its invariant (e.g. an empty task name).
    #[error("invalid message: {0}")]
    InvalidField(String),
    /// The encoded body exceeds the frame cap.
    #[error("encoded body is {len} octets, over the {cap} cap")]
    TooLarge { len: usize, cap: u32 },
}

/// A frame failed to decode.
#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    /// Not a failure: more octets are needed to complete the frame.
    #[error("incomplete frame; need more octets")]
    Truncated,
    /// The declared body length exceeds the cap.
    #[error("declared frame length {declared} exceeds the {cap} cap")]
    TooLarge { declared: u32, cap: u32 },
    /// The body does not parse, the kind is unknown, or a field violates
    /// its invariant.
    #[error("malformed frame: {0}")]
    Malformed(String),
}

/// Encode one message into a frame using the default cap.
pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    encode_tagged(None, msg, DEFAULT_FRAME_CAP)
}

/// Encode one message, optionally wrapped in a relay envelope (`ctag`).
pub fn encode_tagged(
    ctag: Option<u32>,
    msg: &Message,
    cap: u32,
) -> Result<Vec<u8>, EncodeError> {
    msg.validate().map_err(EncodeError::InvalidField)?;
    let body = match ctag {
        None => serde_json::to_vec(msg).expect("message serialization is infallible"),
        Some(tag) => {
            let mut value =
                serde_json::to_value(msg).expect("message serialization is infallible");
            value
                .as_object_mut()
                .expect("messages encode as objects")
                .insert("ctag".into(), tag.into());
            serde_json::to_vec(&value).expect("value serialization is infallible")
        }
    };
    if body.len() > cap as usize {
        return Err(EncodeError::TooLarge {
            len: body.len(),
            cap,
        });
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decode the first frame in `bytes` using the default cap.
///
/// Returns the message and the count of octets consumed; trailing octets
/// are untouched. [`DecodeError::Truncated`] is a resumption signal, not a
/// failure: read more octets and call again.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
    let (_, msg, used) = decode_tagged(bytes, DEFAULT_FRAME_CAP)?;
    Ok((msg, used))
}

/// Decode the first frame in `bytes`, surfacing a relay `ctag` if present.
pub fn decode_tagged(
    bytes: &[u8],
    cap: u32,
) -> Result<(Option<u32>, Message, usize), DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Truncated);
    }
    let declared = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if declared > cap {
        return Err(DecodeError::TooLarge { declared, cap });
    }
    let len = declared as usize;
    if bytes.len() < 4 + len {
        return Err(DecodeError::Truncated);
    }
    let (ctag, msg) = decode_body(&bytes[4..4 + len])?;
    Ok((ctag, msg, 4 + len))
}

/// Decode a frame body (the octets after the length prefix).
///
/// Useful when the framing has already been stripped by stream I/O.
pub fn decode_body(body: &[u8]) -> Result<(Option<u32>, Message), DecodeError> {
    let mut value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| DecodeError::Malformed(format!("body is not a JSON object: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| DecodeError::Malformed("body is not a JSON object".into()))?;
    let ctag = match obj.remove("ctag") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .and_then(|t| u32::try_from(t).ok())
                .ok_or_else(|| {
                    DecodeError::Malformed("ctag must be an unsigned 32-bit integer".into())
                })?,
        ),
    };
    let msg: Message = serde_json::from_value(value)
        .map_err(|e| DecodeError::Malformed(format!("unknown or ill-typed message: {e}")))?;
    msg.validate().map_err(DecodeError::Malformed)?;
    Ok((ctag, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent construction of the expected frame for a JSON body.
    fn frame_of(json: &str) -> Vec<u8> {
        let mut f = (json.len() as u32).to_le_bytes().to_vec();
        f.extend_from_slice(json.as_bytes());
        f
    }

    #[test]
    fn golden_frames_match_the_documented_layout() {
        // Field order is declaration order, tag first; these bytes are the
        // published wire format and must never drift.
        let cases: Vec<(Message, &str)> = vec![
            (
                Message::StealReq {
                    worker: "w1".into(),
                    n: 1,
                },
                r#"{"type":"steal","worker":"w1","n":1}"#,
            ),
            (
                Message::CreateReq {
                    task: TaskSpec::new("t1", "echo hi", "cli"),
                    deps: vec!["t0".into()],
                },
                r#"{"type":"create","task":{"name":"t1","payload":"echo hi","originator":"cli"},"deps":["t0"]}"#,
            ),
            (
                Message::CompleteReq {
                    worker: "w1".into(),
                    task: "t1".into(),
                    ok: true,
                },
                r#"{"type":"complete","worker":"w1","task":"t1","ok":true}"#,
            ),
            (
                Message::TransferReq {
                    worker: "w1".into(),
                    task: "t1".into(),
                    new_deps: vec![],
                },
                r#"{"type":"transfer","worker":"w1","task":"t1","new_deps":[]}"#,
            ),
            (
                Message::ExitReq { worker: "w9".into() },
                r#"{"type":"exit","worker":"w9"}"#,
            ),
            (Message::StatReq, r#"{"type":"stat"}"#),
            (Message::OkResp, r#"{"type":"ok"}"#),
            (
                Message::TasksResp {
                    tasks: vec![TaskSpec::new("a", "", "")],
                },
                r#"{"type":"tasks","tasks":[{"name":"a","payload":"","originator":""}]}"#,
            ),
            (Message::NotFoundResp, r#"{"type":"notfound"}"#),
            (Message::ExitResp, r#"{"type":"exitresp"}"#),
            (
                Message::ErrResp {
                    message: "nope".into(),
                },
                r#"{"type":"err","message":"nope"}"#,
            ),
            (
                Message::StatResp {
                    counts: StatCounts::default(),
                },
                r#"{"type":"statresp","counts":{"waiting":0,"ready":0,"assigned":0,"done":0,"errored":0,"deque":0,"assignments":0}}"#,
            ),
        ];
        for (msg, json) in cases {
            assert_eq!(
                encode(&msg).unwrap(),
                frame_of(json),
                "layout drift for kind {}",
                msg.kind()
            );
            let (decoded, used) = decode(&frame_of(json)).unwrap();
            assert_eq!(decoded, msg);
            assert_eq!(used, 4 + json.len());
        }
    }

    #[test]
    fn empty_task_name_is_an_encode_error() {
        let msg = Message::CreateReq {
            task: TaskSpec::new("", "x", "y"),
            deps: vec![],
        };
        assert!(matches!(encode(&msg), Err(EncodeError::InvalidField(_))));
    }

    #[test]
    fn zero_steal_count_rejected_both_ways() {
        let msg = Message::StealReq {
            worker: "w".into(),
            n: 0,
        };
        assert!(encode(&msg).is_err());
        let raw = frame_of(r#"{"type":"steal","worker":"w","n":0}"#);
        assert!(matches!(decode(&raw), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn truncation_yields_truncated_at_every_boundary() {
        let full = encode(&Message::StealReq {
            worker: "w1".into(),
            n: 3,
        })
        .unwrap();
        for cut in 0..full.len() {
            match decode(&full[..cut]) {
                Err(DecodeError::Truncated) => {}
                other => panic!("cut at {cut}: expected Truncated, got {other:?}"),
            }
        }
    }

    #[test]
    fn garbage_body_is_malformed() {
        let raw = frame_of("this is not json");
        assert!(matches!(decode(&raw), Err(DecodeError::Malformed(_))));
        let raw = frame_of(r#"{"type":"no-such-kind"}"#);
        assert!(matches!(decode(&raw), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn oversized_declared_length_is_rejected() {
        let mut raw = (DEFAULT_FRAME_CAP + 1).to_le_bytes().to_vec();
        raw.extend_from_slice(b"xx");
        assert!(matches!(decode(&raw), Err(DecodeError::TooLarge { .. })));
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let raw = frame_of(r#"{"type":"ok","future_field":42}"#);
        let (msg, _) = decode(&raw).unwrap();
        assert_eq!(msg, Message::OkResp);
    }

    #[test]
    fn ctag_round_trips_and_is_invisible_to_plain_decode() {
        let msg = Message::NotFoundResp;
        let framed = encode_tagged(Some(7), &msg, DEFAULT_FRAME_CAP).unwrap();
        let (tag, decoded, _) = decode_tagged(&framed, DEFAULT_FRAME_CAP).unwrap();
        assert_eq!(tag, Some(7));
        assert_eq!(decoded, msg);
        // A plain decode treats ctag as an ignorable field.
        let (decoded, _) = decode(&framed).unwrap();
        assert_eq!(decoded, msg);
    }

    #[test]
    fn concatenated_frames_decode_in_order() {
        let msgs = vec![
            Message::StatReq,
            Message::OkResp,
            Message::ErrResp {
                message: "x".into(),
            },
        ];
        let mut stream = Vec::new();
        for m in &msgs {
            stream.extend_from_slice(&encode(m).unwrap());
        }
        let mut at = 0;
        for m in &msgs {
            let (decoded, used) = decode(&stream[at..]).unwrap();
            assert_eq!(&decoded, m);
            at += used;
        }
        assert_eq!(at, stream.len());
    }

    // --- property tests ------------------------------------------------

    fn arb_name() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9_.-]{1,12}"
    }

    fn arb_text() -> impl Strategy<Value = String> {
        // Exercise escaping: resolved quotes, backslashes, unicode.
        proptest::string::string_regex("[ -~\u{e9}\u{4e2d}]{0,24}").unwrap()
    }

    fn arb_spec() -> impl Strategy<Value = TaskSpec> {
        (arb_name(), arb_text(), arb_text())
            .prop_map(|(name, payload, originator)| TaskSpec {
                name,
                payload,
                originator,
            })
    }

    prop_compose! {
        fn arb_counts()(
            waiting in 0u64..1000, ready in 0u64..1000, assigned in 0u64..1000,
            done in 0u64..1000, errored in 0u64..1000,
            deque in 0u64..1000, assignments in 0u64..1000,
        ) -> StatCounts {
            StatCounts { waiting, ready, assigned, done, errored, deque, assignments }
        }
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (arb_spec(), proptest::collection::vec(arb_name(), 0..4))
                .prop_map(|(task, deps)| Message::CreateReq { task, deps }),
            (arb_name(), 1u32..64).prop_map(|(worker, n)| Message::StealReq { worker, n }),
            (arb_name(), arb_name(), any::<bool>())
                .prop_map(|(worker, task, ok)| Message::CompleteReq { worker, task, ok }),
            (arb_name(), arb_name(), proptest::collection::vec(arb_name(), 0..4))
                .prop_map(|(worker, task, new_deps)| Message::TransferReq {
                    worker,
                    task,
                    new_deps
                }),
            arb_name().prop_map(|worker| Message::ExitReq { worker }),
            Just(Message::StatReq),
            Just(Message::OkResp),
            proptest::collection::vec(arb_spec(), 0..4)
                .prop_map(|tasks| Message::TasksResp { tasks }),
            Just(Message::NotFoundResp),
            Just(Message::ExitResp),
            arb_text().prop_map(|message| Message::ErrResp { message }),
            arb_counts().prop_map(|counts| Message::StatResp { counts }),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(msg in arb_message(), tag in proptest::option::of(any::<u32>())) {
            let framed = encode_tagged(tag, &msg, DEFAULT_FRAME_CAP).unwrap();
            let (got_tag, got, used) = decode_tagged(&framed, DEFAULT_FRAME_CAP).unwrap();
            prop_assert_eq!(used, framed.len());
            prop_assert_eq!(got_tag, tag);
            prop_assert_eq!(&got, &msg);
            // Re-encoding is bit-identical: the encoding is canonical.
            prop_assert_eq!(encode_tagged(tag, &got, DEFAULT_FRAME_CAP).unwrap(), framed);
        }

        #[test]
        fn decode_never_reads_past_declared_length(msg in arb_message(), trailer in proptest::collection::vec(any::<u8>(), 0..32)) {
            let framed = encode(&msg).unwrap();
            let framed_len = framed.len();
            let mut padded = framed;
            padded.extend_from_slice(&trailer);
            let (got, used) = decode(&padded).unwrap();
            prop_assert_eq!(got, msg);
            prop_assert_eq!(used, framed_len);
        }
    }
}

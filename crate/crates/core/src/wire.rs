//! Game-state message codec and TCP framing.
//!
//! Payload format: the topic string `gamestate`, one space, then compact JSON
//! with a fixed key order and three decimals on mm/deg/ms values:
//!
//! ```text
//! gamestate {"frame_id":17,"timestamp_us":283339,"rods":[{"team":"black",
//! "role":"goal","shift_mm":-1.250,"rotation_deg":180.000},...],"inference_ms":2.125}
//! ```
//!
//! The rods array always holds exactly eight entries in canonical order
//! (black goal→striker, then white goal→striker). On the wire each payload is
//! preceded by a 4-byte big-endian length prefix.

use std::io::{Read, Write};

use crate::rods::RodId;
use crate::state::RodState;

pub const TOPIC: &str = "gamestate";
/// Upper bound on a framed payload; anything larger is a corrupt stream.
pub const MAX_FRAME_BYTES: u32 = 1 << 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WireError {
    #[error("payload has no topic prefix")]
    MissingTopic,
    #[error("unexpected topic `{0}`")]
    WrongTopic(String),
    #[error("malformed json: {0}")]
    Json(String),
    #[error("rods array has {0} entries, expected 8")]
    WrongRodCount(usize),
    #[error("rod {0} out of canonical order")]
    RodOrder(usize),
    #[error("non-finite number in field `{0}`")]
    NonFinite(&'static str),
    #[error("missing or mistyped field `{0}`")]
    BadField(&'static str),
}

/// One detected game state as published to subscribers.
#[derive(Debug, Clone, PartialEq)]
pub struct GameStateMessage {
    pub frame_id: u64,
    pub timestamp_us: u64,
    /// Canonical rod order.
    pub rods: [RodState; 8],
    pub inference_ms: f64,
}

fn fmt3(v: f64) -> String {
    format!("{:.3}", v + 0.0)
}

/// Serialize to the canonical topic-prefixed payload. Values are rounded to
/// three decimals; the caller guarantees finiteness (the detection loop never
/// publishes a non-finite state).
pub fn encode_message(msg: &GameStateMessage) -> Vec<u8> {
    debug_assert!(msg.inference_ms.is_finite());
    let mut out = String::with_capacity(640);
    out.push_str(TOPIC);
    out.push(' ');
    out.push_str(&format!(
        "{{\"frame_id\":{},\"timestamp_us\":{},\"rods\":[",
        msg.frame_id, msg.timestamp_us
    ));
    for (i, id) in RodId::ALL.iter().enumerate() {
        let rod = &msg.rods[i];
        debug_assert!(rod.shift_mm.is_finite() && rod.rotation_deg.is_finite());
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "{{\"team\":\"{}\",\"role\":\"{}\",\"shift_mm\":{},\"rotation_deg\":{}}}",
            id.team.as_str(),
            id.role.as_str(),
            fmt3(rod.shift_mm),
            fmt3(rod.rotation_deg)
        ));
    }
    out.push_str(&format!("],\"inference_ms\":{}}}", fmt3(msg.inference_ms)));
    out.into_bytes()
}

fn finite(v: f64, field: &'static str) -> Result<f64, WireError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(WireError::NonFinite(field))
    }
}

/// Total inverse of [`encode_message`] on encoder output; rejects wrong
/// topics, malformed JSON, wrong rod counts/order and non-finite numbers.
pub fn decode_message(payload: &[u8]) -> Result<GameStateMessage, WireError> {
    let text = std::str::from_utf8(payload).map_err(|e| WireError::Json(e.to_string()))?;
    let (topic, json) = text.split_once(' ').ok_or(WireError::MissingTopic)?;
    if topic != TOPIC {
        return Err(WireError::WrongTopic(topic.to_string()));
    }
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| WireError::Json(e.to_string()))?;
    let frame_id = value
        .get("frame_id")
        .and_then(|v| v.as_u64())
        .ok_or(WireError::BadField("frame_id"))?;
    let timestamp_us = value
        .get("timestamp_us")
        .and_then(|v| v.as_u64())
        .ok_or(WireError::BadField("timestamp_us"))?;
    let inference_ms = finite(
        value
            .get("inference_ms")
            .and_then(|v| v.as_f64())
            .ok_or(WireError::BadField("inference_ms"))?,
        "inference_ms",
    )?;
    let rods_value = value
        .get("rods")
        .and_then(|v| v.as_array())
        .ok_or(WireError::BadField("rods"))?;
    if rods_value.len() != 8 {
        return Err(WireError::WrongRodCount(rods_value.len()));
    }
    let mut rods = [RodState { shift_mm: 0.0, rotation_deg: 0.0 }; 8];
    for (i, (entry, id)) in rods_value.iter().zip(RodId::ALL.iter()).enumerate() {
        let team = entry.get("team").and_then(|v| v.as_str()).ok_or(WireError::BadField("team"))?;
        let role = entry.get("role").and_then(|v| v.as_str()).ok_or(WireError::BadField("role"))?;
        if team != id.team.as_str() || role != id.role.as_str() {
            return Err(WireError::RodOrder(i));
        }
        rods[i] = RodState {
            shift_mm: finite(
                entry.get("shift_mm").and_then(|v| v.as_f64()).ok_or(WireError::BadField("shift_mm"))?,
                "shift_mm",
            )?,
            rotation_deg: finite(
                entry
                    .get("rotation_deg")
                    .and_then(|v| v.as_f64())
                    .ok_or(WireError::BadField("rotation_deg"))?,
                "rotation_deg",
            )?,
        };
    }
    Ok(GameStateMessage { frame_id, timestamp_us, rods, inference_ms })
}

/// Write one length-prefixed payload.
pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Read one length-prefixed payload.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(payload)
}

#[cfg(test)]
pub(crate) fn sample_message() -> GameStateMessage {
    let mut rods = [RodState { shift_mm: 0.0, rotation_deg: 180.0 }; 8];
    rods[1] = RodState { shift_mm: -42.5, rotation_deg: 239.125 };
    rods[6] = RodState { shift_mm: 13.375, rotation_deg: 0.25 };
    GameStateMessage { frame_id: 17, timestamp_us: 283_339, rods, inference_ms: 2.125 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_message(rng: &mut ChaCha8Rng) -> GameStateMessage {
        let mut rods = [RodState { shift_mm: 0.0, rotation_deg: 0.0 }; 8];
        for rod in &mut rods {
            rod.shift_mm = rng.random_range(-130.0..130.0);
            rod.rotation_deg = rng.random_range(0.0..360.0);
        }
        GameStateMessage {
            frame_id: rng.random(),
            timestamp_us: rng.random(),
            rods,
            inference_ms: rng.random_range(0.0..50.0),
        }
    }

    fn round3(v: f64) -> f64 {
        format!("{v:.3}").parse().unwrap()
    }

    #[test]
    fn round_trip_identity_after_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let m = random_message(&mut rng);
            let decoded = decode_message(&encode_message(&m)).unwrap();
            assert_eq!(decoded.frame_id, m.frame_id);
            assert_eq!(decoded.timestamp_us, m.timestamp_us);
            assert_eq!(decoded.inference_ms, round3(m.inference_ms));
            for (d, o) in decoded.rods.iter().zip(m.rods.iter()) {
                assert_eq!(d.shift_mm, round3(o.shift_mm));
                assert_eq!(d.rotation_deg, round3(o.rotation_deg));
            }
        }
    }

    #[test]
    fn encoder_output_is_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let m = random_message(&mut rng);
            let once = encode_message(&m);
            let twice = encode_message(&decode_message(&once).unwrap());
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn zero_state_formats_with_three_decimals() {
        let m = GameStateMessage {
            frame_id: 0,
            timestamp_us: 0,
            rods: [RodState { shift_mm: 0.0, rotation_deg: 0.0 }; 8],
            inference_ms: 0.0,
        };
        let text = String::from_utf8(encode_message(&m)).unwrap();
        assert!(text.starts_with("gamestate {\"frame_id\":0,"));
        assert!(text.contains("\"shift_mm\":0.000"));
        assert!(!text.contains("-0.000"));
        // negative zero normalizes
        let m2 = GameStateMessage { rods: [RodState { shift_mm: -0.0, rotation_deg: -0.0 }; 8], ..m };
        assert_eq!(encode_message(&m2), encode_message(&m));
    }

    #[test]
    fn golden_payload_bytes() {
        let golden = include_bytes!(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_message.bin"));
        assert_eq!(encode_message(&super::sample_message()).as_slice(), golden.as_slice());
    }

    #[test]
    fn decode_rejects_malformed_payloads() {
        let good = encode_message(&super::sample_message());
        assert_eq!(decode_message(b"nospace"), Err(WireError::MissingTopic));
        assert!(matches!(decode_message(b"othertopic {}"), Err(WireError::WrongTopic(_))));
        assert!(matches!(decode_message(b"gamestate {not json"), Err(WireError::Json(_))));

        let text = String::from_utf8(good.clone()).unwrap();
        let swapped = text.replacen(
            "{\"team\":\"white\",\"role\":\"striker\"",
            "{\"team\":\"white\",\"role\":\"goal\"",
            1,
        );
        assert!(matches!(decode_message(swapped.as_bytes()), Err(WireError::RodOrder(_))));

        let nulled = text.replacen("\"shift_mm\":-42.500", "\"shift_mm\":null", 1);
        assert!(matches!(decode_message(nulled.as_bytes()), Err(WireError::BadField(_))));
    }

    #[test]
    fn framing_round_trips() {
        let payload = encode_message(&super::sample_message());
        let mut buf = Vec::new();
        write_frame(&mut buf, &payload).unwrap();
        assert_eq!(buf.len(), payload.len() + 4);
        let mut cursor = std::io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cursor).unwrap(), payload);

        let mut oversized = std::io::Cursor::new(vec![0xff, 0xff, 0xff, 0xff]);
        assert!(read_frame(&mut oversized).is_err());
    }
}

use std::sync::Mutex;
use std::time::{Duration, Instant};

use pilot_core::emulator::{calibrate, run_payload, TaskPayload};

// Wall-clock assertions; run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

#[test]
fn flop_burn_tracks_target_duration() {
    let _g = SERIAL.lock().unwrap();
    let rate = calibrate(Duration::from_millis(200));
    let start = Instant::now();
    assert_eq!(run_payload(&TaskPayload::flop_burn(1.0, 0.0), 1.0, Some(rate)).unwrap(), 0);
    let took = start.elapsed().as_secs_f64();
    assert!((0.8..=1.3).contains(&took), "{took}");
}

#[test]
fn sleep_payload_lasts_its_duration() {
    let _g = SERIAL.lock().unwrap();
    let start = Instant::now();
    run_payload(&TaskPayload::sleep(2.0, 0.0), 2.0, None).unwrap();
    let took = start.elapsed().as_secs_f64();
    assert!((2.0..=2.2).contains(&took), "{took}");
}

#![no_main]

use libfuzzer_sys::fuzz_target;
use swingup::traj::Trajectory;

// The reader must reject malformed tables without panicking; an accepted
// table re-serializes bitwise (floats are written with round-trip
// precision) and parses back to the same trajectory.
fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = Trajectory::read_csv(data) {
        let mut out = Vec::new();
        traj.write_csv(&mut out).expect("accepted trajectory must serialize");
        let again = Trajectory::read_csv(&out[..]).expect("round trip");
        assert_eq!(again, traj);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use obsint::data::parse_imu_csv;

fuzz_target!(|data: &str| {
    let Ok(rows) = parse_imu_csv(data, "fuzz") else { return };
    // Finite rows survive a print/parse cycle exactly.
    if rows.iter().any(|r| !(r.omega.iter().chain(r.accel.iter()).all(|x| x.is_finite()))) {
        return;
    }
    let text: String = rows
        .iter()
        .map(|r| {
            let (w, a) = (r.omega, r.accel);
            format!("{},{},{},{},{},{},{}\n", r.t_ns, w.x, w.y, w.z, a.x, a.y, a.z)
        })
        .collect();
    assert_eq!(parse_imu_csv(&text, "fuzz").unwrap(), rows);
});

#![no_main]

use libfuzzer_sys::fuzz_target;

use clockprobe::SimRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(rec) = SimRecord::read_csv(data) else {
        return;
    };
    let mut first = Vec::new();
    rec.write_csv(&mut first).expect("write accepted record");
    let again = SimRecord::read_csv(first.as_slice()).expect("reread own output");
    let mut second = Vec::new();
    again.write_csv(&mut second).unwrap();
    assert_eq!(first, second);
});

#![no_main]

use libfuzzer_sys::fuzz_target;

use clockprobe_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        // accepted configs must survive their own validation again
        if let Ok(cfg) = RunConfig::from_toml_str(s) {
            cfg.validate().expect("parsed config failed revalidation");
        }
    }
});

#![no_main]

use domsel::checkpoint;
use libfuzzer_sys::fuzz_target;

// Input layout: manifest JSON, a NUL byte, then the tensor archive.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else { return };
    if let Ok(params) = checkpoint::decode(manifest, &data[split + 1..]) {
        let (m, d) = checkpoint::encode(&params);
        assert_eq!(checkpoint::decode(&m, &d).unwrap(), params);
    }
});

//! The .ld checkpoint format: writing and reading the three record kinds,
//! corruption detection, and the size relation that makes reused compressed
//! gradients cheap: a sparse gradient over Ψ entries is exactly one third of
//! a same-ratio differential over the full 3Ψ model state.
//!
//! Run with: cargo run --release --example checkpoint_format

use lowdiff::compress::{compress, CompressorKind};
use lowdiff::model::ModelState;
use lowdiff::store::{
    list_chain, read_checkpoint, write_checkpoint, CheckpointRecord, StorageBackend, HEADER_LEN,
};

fn main() -> lowdiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = StorageBackend::new(dir.path())?;
    let psi = 50_000;

    // one of each record kind
    let mut state = ModelState::zeros(psi);
    state.step = 100;
    let (full_id, full_bytes) = write_checkpoint(&CheckpointRecord::full(state), &store)?;
    println!("{full_id}: {full_bytes} bytes = {HEADER_LEN} header + 3 x {psi} x 8 payload");

    let dense: Vec<f64> = (0..psi).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
    let grad = compress(&dense, 0.01, &CompressorKind::TopK, 101)?;
    let (diff_id, diff_bytes) = write_checkpoint(&CheckpointRecord::diff(grad), &store)?;
    println!("{diff_id}: {diff_bytes} bytes (k = {} entries of 12 bytes)", psi / 100);

    let batch: Vec<_> = (102..=105)
        .map(|t| compress(&dense, 0.01, &CompressorKind::TopK, t))
        .collect::<lowdiff::Result<_>>()?;
    let (batch_id, batch_bytes) =
        write_checkpoint(&CheckpointRecord::batched(batch)?, &store)?;
    println!("{batch_id}: {batch_bytes} bytes covering iterations 102..=105");

    // round trip and chain listing
    let back = read_checkpoint(&diff_id, &store)?;
    println!("read back {diff_id}: covered {:?}, checksum verified", back.covered);
    let chain = list_chain(&store, 105)?;
    println!(
        "chain to 105: full @{} plus {} differential records",
        chain.full_iteration,
        chain.diffs.len()
    );

    // size law: same ratio over Ψ vs over the 3Ψ flat state
    let state_delta: Vec<f64> = (0..3 * psi).map(|i| (i % 7) as f64 - 3.0).collect();
    let over_state = compress(&state_delta, 0.01, &CompressorKind::TopK, 1)?;
    let gradient_payload = compress(&dense, 0.01, &CompressorKind::TopK, 1)?.payload_bytes();
    println!(
        "payloads at ratio 0.01: gradient {} bytes, full-state differential {} bytes ({}x)",
        gradient_payload,
        over_state.payload_bytes(),
        over_state.payload_bytes() / gradient_payload
    );

    // corruption is caught by the payload checksum
    let path = store.object_path(&diff_id);
    let mut bytes = std::fs::read(&path)?;
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes)?;
    match read_checkpoint(&diff_id, &store) {
        Err(e) => println!("flipped one payload bit: {e}"),
        Ok(_) => unreachable!("corruption must not pass the checksum"),
    }
    Ok(())
}

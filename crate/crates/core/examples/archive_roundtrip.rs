//! Writes mixed-dtype tensors and metadata, then reads them back.

use oats::tensor_store::{Dtype, NamedTensor, TensorArchive};

pub fn run_example() -> oats::Result<TensorArchive> {
    let mut archive = TensorArchive::new();
    let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
    archive.insert(NamedTensor::from_f32("layer.weight", vec![3, 4], &values)?)?;
    archive.insert(NamedTensor::from_f32_as("layer.weight.half", Dtype::F16, vec![3, 4], &values)?)?;
    archive.insert(NamedTensor::from_f32_as("layer.weight.bf16", Dtype::BF16, vec![12], &values)?)?;
    archive.insert(NamedTensor::from_i64("layer.index", vec![4], &[0, 2, 5, 9])?)?;
    archive.metadata.insert("producer".into(), "archive_roundtrip".into());

    let bytes = archive.to_bytes();
    let back = TensorArchive::from_bytes(&bytes)?;
    println!("{} bytes, {} tensors", bytes.len(), back.len());
    for t in back.tensors.values() {
        println!("  {:<20} {:<5} {:?}", t.name, t.dtype, t.shape);
    }
    assert_eq!(back, archive);
    Ok(back)
}

#[allow(dead_code)]
fn main() -> oats::Result<()> {
    run_example().map(|_| ())
}

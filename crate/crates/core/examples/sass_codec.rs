//! Storage formats for sparse quantized modules: size formulas, group
//! choice, the format crossover and a bit-exact round trip.

use taskswitch::codec::sass::{candidate_sizes, encode_best};
use taskswitch::codec::{
    choose_format, decode, expected_bits, optimal_group, ModuleData, QuantizedModule,
};

fn main() -> taskswitch::Result<()> {
    let n = 1 << 12;
    println!("alpha  group  expected  sass    indep   dense    chosen");
    for alpha in [0.0, 0.3, 0.6, 0.9, 0.98, 1.0] {
        let nnz = ((1.0 - alpha) * n as f64).round() as usize;
        let q = QuantizedModule {
            n,
            bits: 2,
            range_neg: 1.0,
            range_pos: 1.0,
            scale: 1.0,
            survivors: (0..nnz)
                .map(|i| ((i * n / nnz) as u32, (i % 4) as u32))
                .collect(),
        };
        let c = optimal_group(n, q.sparsity());
        let sizes = candidate_sizes(&q);
        println!(
            "{alpha:<6} {c:<6} {:<9.0} {:<7} {:<7} {:<8} {}",
            expected_bits(n, c, q.sparsity(), 2),
            sizes[0].1,
            sizes[1].1,
            sizes[2].1,
            choose_format(&q).name()
        );
        let enc = encode_best(&q)?;
        let (_, back) = decode(&enc.bytes)?;
        assert_eq!(back, ModuleData::Quantized(q));
    }
    println!("every module decoded back to the same bins");
    Ok(())
}

use std::time::Instant;
use stformer_core::autodiff::Tape;
use stformer_core::model::*;
use stformer_core::rng;
use stformer_core::Tensor;

fn main() {
    let config = ModelConfig {
        channels: 8, blocks_per_stage: vec![2], heads: 2, window: (7, 7),
        compression: 2, in_channels: 1, out_channels: 1,
    };
    let params = build_model::<f64>(&config, 105).unwrap();
    let mut r = rng::seeded(1050);
    let field: Tensor<f64> = Tensor::from_fn(&[1, 2, 14, 14, 8], |_| rng::sample_uniform(&mut r, -0.8, 0.8));

    let n = 2000;
    let mut tape = Tape::new();
    let f = tape.constant(field.clone());
    let bound = bind_params(&mut tape, &params, false);
    let geom = WindowGeometry::new(14, 14, 7, 7, (0, 0));

    let t0 = Instant::now();
    let mut win = f;
    for _ in 0..n { win = window_partition(&mut tape, f, &geom).unwrap(); }
    println!("partition: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    let flat0 = tape.reshape(win, &[8 * 49, 8]).unwrap();
    let t0 = Instant::now();
    let mut q = flat0;
    for _ in 0..n { q = tape.matmul(flat0, bound.blocks[0].ssa.wq).unwrap(); }
    println!("one qkv matmul: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    // heads split
    let qs = tape.reshape(q, &[8, 49, 8]).unwrap();
    let t0 = Instant::now();
    let mut qh = qs;
    for _ in 0..n {
        let a = tape.reshape(qs, &[8, 49, 2, 4]).unwrap();
        let b = tape.permute(a, &[0, 2, 1, 3]).unwrap();
        qh = tape.reshape(b, &[16, 49, 4]).unwrap();
    }
    println!("head split: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    let kh = qh;
    let t0 = Instant::now();
    let mut scores = qh;
    for _ in 0..n {
        let kt = tape.permute(kh, &[0, 2, 1]).unwrap();
        scores = tape.matmul(qh, kt).unwrap();
    }
    println!("kt + scores: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let _ = tape.softmax_lastdim(scores).unwrap();
    }
    println!("softmax: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let rows = tape.gather_rows(bound.blocks[0].ssa.bias_table, &spatial_relative_index(7, 7)).unwrap();
        let cube = tape.reshape(rows, &[49, 49, 2]).unwrap();
        let _ = tape.permute(cube, &[2, 0, 1]).unwrap();
    }
    println!("bias gather+permute: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    let bias = {
        let rows = tape.gather_rows(bound.blocks[0].ssa.bias_table, &spatial_relative_index(7, 7)).unwrap();
        let cube = tape.reshape(rows, &[49, 49, 2]).unwrap();
        tape.permute(cube, &[2, 0, 1]).unwrap()
    };
    let grouped = tape.reshape(scores, &[8, 2, 49, 49]).unwrap();
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = tape.add(grouped, bias).unwrap();
    }
    println!("bias add: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let _ = window_reverse(&mut tape, win, &geom, 1, 2).unwrap();
    }
    println!("reverse: {:.1} us", t0.elapsed().as_secs_f64() * 1e6 / n as f64);
    println!("tape nodes at end: {}", tape.len());
}

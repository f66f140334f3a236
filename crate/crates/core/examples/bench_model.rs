use std::time::Instant;

use acpp_core::model::{HeadGrads, HeadSelection, ModelConfig, SegmentationNetwork};

fn main() {
    for width in [8, 16] {
        let cfg = ModelConfig { base_width: width, ..ModelConfig::default() };
        let net = SegmentationNetwork::new(cfg, 1).unwrap();
        let img: Vec<f64> = (0..64 * 64).map(|i| (i as f64 * 0.01).sin()).collect();
        let t = Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let f = net.forward_image(&img, 64, 64, HeadSelection::ALL).unwrap();
            let up = HeadGrads {
                logits: Some(vec![0.01; f.logits.len()]),
                dense_reps: Some(vec![0.01; 64 * 64 * 128]),
                ..HeadGrads::default()
            };
            let mut g = net.params.zeros_like();
            net.backward(&f, &up, &mut g).unwrap();
        }
        let fb = t.elapsed().as_secs_f64() / reps as f64;
        let t = Instant::now();
        for _ in 0..reps {
            net.forward_image(&img, 64, 64, HeadSelection::ALL).unwrap();
        }
        let fw = t.elapsed().as_secs_f64() / reps as f64;
        println!("w0={width}: forward {:.1} ms, forward+backward {:.1} ms, params {}", fw * 1e3, fb * 1e3, net.parameter_count());
    }
}

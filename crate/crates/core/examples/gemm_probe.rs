use std::time::Instant;
use svgd_explore::scalar::Scalar;

fn time_gemm(label: &str, m: usize, k: usize, n: usize, rsa: isize, csa: isize, reps: u32) {
    let a = vec![0.5f64; (m * k).max((rsa.unsigned_abs() * (m - 1) + csa.unsigned_abs() * (k - 1) + 1) as usize)];
    let b = vec![0.25f64; k * n];
    let mut c = vec![0.0f64; m * n];
    let t0 = Instant::now();
    for _ in 0..reps {
        f64::gemm(m, k, n, 1.0, &a, rsa, csa, &b, n as isize, 1, 0.0, &mut c, n as isize, 1);
    }
    let el = t0.elapsed() / reps;
    let flops = 2.0 * m as f64 * k as f64 * n as f64;
    println!("{label}: {:?} ({:.2} Gflop/s)", el, flops / el.as_secs_f64() / 1e9);
}

fn main() {
    let p = 65792usize;
    // dW = dZ^T (P x 5) . H (5 x 64); A strided as transpose of (5 x P).
    time_gemm("dW tall-skinny A^T", p, 5, 64, 1, p as isize, 10);
    // Same shape but contiguous A.
    time_gemm("dW tall-skinny contiguous", p, 5, 64, 5, 1, 10);
    // dX = dZ (5 x P) . W (P x 64).
    time_gemm("dX wide-k", 5, p, 64, p as isize, 1, 10);
    // forward: H (5 x 64) x W^T view (64 x P).
    let a = vec![0.5f64; 5 * 64];
    let b = vec![0.25f64; p * 64];
    let mut c = vec![0.0f64; 5 * p];
    let t0 = Instant::now();
    for _ in 0..10 {
        f64::gemm(5, 64, p, 1.0, &a, 64, 1, &b, 1, 64, 0.0, &mut c, p as isize, 1);
    }
    println!("fwd out-layer: {:?} ({:.2} Gflop/s)", t0.elapsed() / 10, 2.0 * 5.0 * 64.0 * p as f64 / (t0.elapsed() / 10).as_secs_f64() / 1e9);
    // square-ish reference
    time_gemm("square 512", 512, 512, 512, 512, 1, 10);
}

use hemker::pipeline::PipelineRun;
use hemker::solver::SolverOptions;
use hemker::ProblemParams;

fn main() {
    for n in [16usize, 32, 64, 128] {
        let p = ProblemParams::new(1.0, n).unwrap();
        let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
        let sol = run.corrected().unwrap();
        // max |U2 - U1| over a fine probe grid, tracking location
        let mut max = 0.0;
        let mut arg = (0.0, 0.0);
        for gj in 0..400 {
            let y = -4.0 + 8.0 * gj as f64 / 399.0;
            for gi in 0..400 {
                let x = -4.0 + 8.0 * gi as f64 / 399.0;
                if x * x + y * y <= 1.0 || (x < 0.0 && x * x + y * y > 16.0) {
                    continue;
                }
                let d = (sol.eval(x, y).unwrap() - run.initial.eval(x, y).unwrap()).abs();
                if d > max {
                    max = d;
                    arg = (x, y);
                }
            }
        }
        println!(
            "N={n}: max|U2-U1| = {max:.4e} at ({:.3}, {:.3})  [L*={:.3}, L={:.3}]",
            arg.0,
            arg.1,
            p.l_star(),
            p.patch_len
        );
    }
}

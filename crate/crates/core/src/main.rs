use std::process::ExitCode;

fn main() -> ExitCode {
    // NLKELVIN_THREADS caps the worker pool; reductions are chunk-ordered, so
    // results do not depend on the thread count.
    if let Ok(spec) = std::env::var("NLKELVIN_THREADS") {
        match spec.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: NLKELVIN_THREADS must be a positive integer, got '{spec}'");
                return ExitCode::from(64);
            }
        }
    }
    let code = nlkelvin::cli_io::dispatch(std::env::args());
    ExitCode::from(code.clamp(0, 255) as u8)
}

use std::process::ExitCode;

fn main() -> ExitCode {
    match sspc::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}", e.kind(), msg.trim());
            ExitCode::FAILURE
        }
    }
}

use std::process::ExitCode;

fn main() -> ExitCode {
    match resetlp::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", resetlp::cli::error_line(&e));
            ExitCode::FAILURE
        }
    }
}

use std::process::ExitCode;

fn main() -> ExitCode {
    splatfix_cli::main_with(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    relaynet_cli::main_with(std::env::args_os())
}

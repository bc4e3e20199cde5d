fn main() -> std::process::ExitCode {
    parttex_cli::run_from(std::env::args_os())
}

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(drstage::cli::run(std::env::args_os()))
}

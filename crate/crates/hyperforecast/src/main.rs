fn main() -> std::process::ExitCode {
    hyperforecast::cli::main()
}

fn main() -> std::process::ExitCode {
    art::cli::run()
}

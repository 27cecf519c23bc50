fn main() -> std::process::ExitCode {
    bodynet::cli::run()
}

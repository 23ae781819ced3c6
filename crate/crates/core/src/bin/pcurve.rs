fn main() -> std::process::ExitCode {
    pcurve::cli::main()
}

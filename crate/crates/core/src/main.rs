fn main() -> std::process::ExitCode {
    stnet::cli::main()
}

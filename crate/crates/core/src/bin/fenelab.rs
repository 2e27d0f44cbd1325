fn main() -> std::process::ExitCode {
    fenelab::cli::main()
}

fn main() -> std::process::ExitCode {
    lglab::cli::main()
}

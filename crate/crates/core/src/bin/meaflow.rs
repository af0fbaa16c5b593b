fn main() -> std::process::ExitCode {
    meaflow::cli::main()
}

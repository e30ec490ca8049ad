fn main() -> std::process::ExitCode {
    pipetune::cli::main()
}

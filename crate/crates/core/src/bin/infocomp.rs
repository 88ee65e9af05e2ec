fn main() -> std::process::ExitCode {
    infocomp::cli::main()
}

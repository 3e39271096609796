fn main() -> std::process::ExitCode {
    hgn::cli::main()
}

fn main() -> std::process::ExitCode {
    mipin::cli::main()
}

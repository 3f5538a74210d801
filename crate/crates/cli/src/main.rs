fn main() -> std::process::ExitCode {
    taildep_cli::main_entry()
}

fn main() {
    std::process::exit(fuselocate_cli::main_with_args(std::env::args_os()));
}

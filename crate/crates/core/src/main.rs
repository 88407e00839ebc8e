use privmask::cli;

fn main() {
    std::process::exit(cli::main_with_exit_codes());
}

fn main() {
    let outcome = harnack_cli::run(std::env::args_os());
    if outcome.code == 0 {
        print!("{}", outcome.message);
    } else {
        eprint!("{}", outcome.message);
    }
    std::process::exit(outcome.code);
}

#include "codebrain/cli/app.hpp"

int main(int argc, char** argv) { return codebrain::cli::run(argc, argv); }

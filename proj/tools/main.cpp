// SPDX-License-Identifier: Apache-2.0

#include "taskmod/cli/cli.hpp"

int main(int argc, char** argv) { return taskmod::run_cli(argc, argv); }

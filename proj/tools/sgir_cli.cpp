// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgir/cli.hpp"

int main(int argc, char** argv) { return sgir::cli::run(argc, argv); }

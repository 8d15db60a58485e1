/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/runner.hpp"

int main(int argc, char** argv) { return sdmae::cli_main(argc, argv); }

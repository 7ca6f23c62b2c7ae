// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
  std::puts("memba cli: under construction");
  return 0;
}

#!/usr/bin/env python3
"""
Unified Test Suite for the Invariant Manifold Toolkit
Runs every test module in dependency order and prints a summary table.
"""

import argparse
import importlib
import logging
import os
import sys
import time
import traceback

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# Configure logging
logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

MODULES = [
    ("Field core", "test_field_core", False),
    ("Gross-Pitaevskii model", "test_gp_model", False),
    ("Linearization", "test_linearization", False),
    ("Synthetic models", "test_synthetic_models", False),
    ("Spectral decomposition", "test_spectral_decomposition", False),
    ("Bundle reduction", "test_bundle_reduction", False),
    ("Propagator", "test_propagator", True),
    ("Manifold solver", "test_manifold_solver", True),
    ("Verification harness", "test_verification_harness", True),
]


def run_module(name: str) -> dict:
    """Run every test_* function of a module; failures are collected, not raised"""
    module = importlib.import_module(name)
    tests = [getattr(module, attr) for attr in vars(module)
             if attr.startswith("test_") and callable(getattr(module, attr))]
    result = {"passed": 0, "failed": [], "seconds": 0.0}
    start = time.time()
    for test in tests:
        try:
            test()
            result["passed"] += 1
        except Exception as e:
            print(f"❌ {test.__name__}: {type(e).__name__}: {e}")
            traceback.print_exc()
            result["failed"].append(test.__name__)
    result["seconds"] = time.time() - start
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run all toolkit tests")
    parser.add_argument("--quick", action="store_true", help="skip the integration-heavy modules")
    args = parser.parse_args(argv)

    print("🌊 INVARIANT MANIFOLD TOOLKIT - UNIFIED TEST SUITE 🌊")
    print("====================================================")
    results = {}
    for index, (title, name, slow) in enumerate(MODULES, start=1):
        if slow and args.quick:
            print(f"\n⏩ {index}. {title}: skipped (--quick)")
            results[title] = None
            continue
        print(f"\n{index}. {title}")
        results[title] = run_module(name)

    print("\n🏁 TEST RESULTS SUMMARY")
    print("========================")
    failures = 0
    for title, result in results.items():
        if result is None:
            print(f"⏩ {title:<24} SKIPPED")
            continue
        failures += len(result["failed"])
        mark = "✅" if not result["failed"] else "❌"
        print(f"{mark} {title:<24} {result['passed']:>3} passed {len(result['failed']):>3} failed "
              f"({result['seconds']:.1f}s)")
        for test in result["failed"]:
            print(f"      - {test}")
    if failures:
        print(f"\n❌ {failures} test(s) failed - check the output above")
        return 1
    print("\n🎉 All selected tests passed!")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n⏹️ Tests interrupted by user.")
        sys.exit(1)

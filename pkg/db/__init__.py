# Run ledger models and session management

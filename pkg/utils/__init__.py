# MSQED Lab - Utilities
